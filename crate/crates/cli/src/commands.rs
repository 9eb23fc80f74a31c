use std::io::Write;
use std::path::Path;

use lkd::analysis::{
    compare_csv, compare_direct_vs_decomposed, eq3_report, erf_probe, CostReport, Footprint, Tap,
};
use lkd::blocks::Decomposition;
use lkd::gradcheck::run_suite;
use lkd::haze::{load_dataset, make_dataset, save_dataset, HazePair};
use lkd::model::{LkdConfig, LkdNet, Variant};
use lkd::train::{evaluate, metrics_csv, train, MetricRow};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{
    Cli, Command, CountArgs, ErfArgs, EvalArgs, FootprintArgs, GradcheckArgs, SynthArgs, TapArg,
    TrainArgs, VariantArg,
};

pub const CHECKPOINT: &str = "model.ckpt";
pub const METRICS: &str = "metrics.csv";
pub const CONFIG: &str = "config.json";

type Result<T> = std::result::Result<T, CliError>;

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    // Output is buffered so the command can run inside a worker pool; it is
    // written even when the command fails part-way.
    let mut buf = Vec::new();
    let result = match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(|| run_command(cli, &mut buf)),
        None => run_command(cli, &mut buf),
    };
    out.write_all(&buf)?;
    result
}

fn run_command(cli: &Cli, out: &mut Vec<u8>) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(a, cli.seed, out),
        Command::Train(a) => train_cmd(a, cli.seed, out),
        Command::Eval(a) => eval(a, out),
        Command::Count(a) => count(a, out),
        Command::Footprint(a) => footprint(a, out),
        Command::Erf(a) => erf(a, cli.seed, out),
        Command::Gradcheck(a) => gradcheck(a, out),
    }
}

fn synth(a: &SynthArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(a.config.config.as_deref())?.with_seed(seed);
    let pairs = make_dataset(&cfg.data)?;
    let manifest = save_dataset(&pairs, &a.out)?;
    std::fs::write(a.out.join(CONFIG), cfg.to_json())?;
    writeln!(
        out,
        "wrote {} pairs of {}x{} ({})",
        pairs.len(),
        cfg.data.size,
        cfg.data.size,
        manifest.display()
    )?;
    Ok(())
}

fn load_pairs(dir: &Path) -> Result<Vec<HazePair>> {
    if !dir.is_dir() {
        return Err(CliError::Core(lkd::Error::Invalid(format!(
            "dataset directory {} does not exist",
            dir.display()
        ))));
    }
    Ok(load_dataset(dir)?)
}

fn train_cmd(a: &TrainArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::load(a.config.config.as_deref())?.with_seed(seed);
    let train_set = match &a.data {
        Some(d) => load_pairs(d)?,
        None => make_dataset(&cfg.data)?,
    };
    let eval_set = match &a.eval_data {
        Some(d) => load_pairs(d)?,
        None => Vec::new(),
    };
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join(CONFIG), cfg.to_json())?;
    let ckpt = a.out.join(CHECKPOINT);
    let mut net = LkdNet::<f32>::build(cfg.model.clone(), cfg.train.seed)?;
    // The checkpoint is rewritten at every evaluation point, so after a
    // numeric failure it still holds the last good state.
    net.save(&ckpt)?;
    let mut rows: Vec<MetricRow> = Vec::new();
    let result = train(&mut net, &train_set, &eval_set, &cfg.train, |n, row| {
        n.save(&ckpt)?;
        rows.push(row.clone());
        Ok(())
    });
    std::fs::write(a.out.join(METRICS), metrics_csv(&rows))?;
    result?;
    if let Some(last) = rows.last() {
        writeln!(
            out,
            "step {} loss {:.5} psnr {:.3} ssim {:.4}",
            last.step, last.loss, last.psnr, last.ssim
        )?;
    }
    writeln!(out, "checkpoint {}", ckpt.display())?;
    Ok(())
}

fn eval(a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let mut net = LkdNet::<f32>::load(&a.ckpt)?;
    let pairs = load_pairs(&a.data)?;
    let rep = evaluate(&mut net, &pairs)?;
    write!(out, "{}", rep.csv())?;
    Ok(())
}

fn count(a: &CountArgs, out: &mut dyn Write) -> Result<()> {
    if let Some(v) = &a.eq3 {
        write!(out, "{}", eq3_report(v[0], v[1], v[2])?)?;
        return Ok(());
    }
    if let Some(ks) = &a.compare {
        let rows = compare_direct_vs_decomposed(ks, a.dilation, a.channels)?;
        write!(out, "{}", compare_csv(&rows))?;
        return Ok(());
    }
    let model = match &a.config {
        Some(p) => RunConfig::load(Some(p))?.model,
        None => match a.variant {
            VariantArg::T => LkdConfig::preset(Variant::T),
            VariantArg::S => LkdConfig::preset(Variant::S),
            VariantArg::B => LkdConfig::preset(Variant::B),
            VariantArg::L => LkdConfig::preset(Variant::L),
            VariantArg::Desk => LkdConfig::desk(),
        },
    };
    let net = LkdNet::<f32>::build(model, 0)?;
    write!(out, "{}", CostReport::of(&net, a.hw, a.hw)?.csv())?;
    Ok(())
}

fn footprint(a: &FootprintArgs, out: &mut dyn Write) -> Result<()> {
    let fp = Footprint::new(Decomposition::new(a.kernel, a.dilation)?)?;
    writeln!(out, "{fp}")?;
    if a.grid {
        for row in fp.grid() {
            let line: String = row.iter().map(|&b| if b { '#' } else { '.' }).collect();
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

fn erf(a: &ErfArgs, seed: Option<u64>, out: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load(a.config.config.as_deref())?
        .with_seed(seed)
        .erf;
    if let Some(t) = a.tap {
        cfg.tap = match t {
            TapArg::Bottleneck => Tap::Bottleneck,
            TapArg::Output => Tap::Output,
        };
    }
    let mut net = LkdNet::<f32>::load(&a.ckpt)?;
    let rep = erf_probe(&mut net, &cfg)?;
    rep.write(&a.out)?;
    write!(out, "{}", rep.table_text())?;
    Ok(())
}

fn gradcheck(a: &GradcheckArgs, out: &mut dyn Write) -> Result<()> {
    if a.list {
        for name in lkd::gradcheck::case_names() {
            writeln!(out, "{name}")?;
        }
        return Ok(());
    }
    if a.seeds == 0 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let results = run_suite(a.op.as_deref(), &seeds)?;
    let failed = results.iter().filter(|r| !r.passed()).count();
    for r in &results {
        writeln!(out, "{r}")?;
    }
    writeln!(out, "{} checks, {failed} failed", results.len())?;
    if failed > 0 {
        return Err(CliError::Check(format!(
            "{failed} of {} gradient checks failed",
            results.len()
        )));
    }
    Ok(())
}
