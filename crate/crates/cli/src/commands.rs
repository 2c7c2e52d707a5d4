use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use serde::Serialize;
use snn_trojan::attack::{
    check_pattern, fault_campaign, pick_trojan, record_outputs, select_pattern_for, PatternFile,
};
use snn_trojan::data::{generate_synthetic, load_dataset, save_dataset, LabeledDataset};
use snn_trojan::grad::{toy_template, train_toy};
use snn_trojan::hw::{
    attack_dataset, build_system, exhaustive_test_count_for, run_attack_sequence, AttackConfig, AttackSummary,
    FsmState, HtConfig,
};
use snn_trojan::snn::{accuracy, load_model, save_model, FaultKind, NetworkSpec, NeuronAddress};
use snn_trojan::trigger::{generate_trigger, load_trigger, save_trigger, verify_trigger};

use crate::config::RunConfig;
use crate::VerificationFailed;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn dataset(path: &Path) -> Result<LabeledDataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

fn model(cfg: &RunConfig) -> Result<NetworkSpec> {
    let path = cfg.model_path();
    load_model(&path).with_context(|| format!("loading model {}", path.display()))
}

/// Train and test sets together: the clean data a trigger pattern must
/// never appear in.
fn complete_dataset(cfg: &RunConfig) -> Result<LabeledDataset> {
    let train = dataset(&cfg.train_path())?;
    let test = dataset(&cfg.test_path())?;
    Ok(train.merged(&test)?)
}

fn trojan_from_config(cfg: &RunConfig) -> Result<Option<NeuronAddress>> {
    cfg.pattern.trojan.as_deref().map(|s| Ok(s.parse()?)).transpose()
}

pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let mut params = cfg.data.synthetic.clone();
    params.seed = cfg.stage_seed("data");
    let all = generate_synthetic(&params)?;
    if cfg.data.train_samples >= all.len() {
        return Err(anyhow!(
            "train_samples {} leaves no test samples out of {}",
            cfg.data.train_samples,
            all.len()
        ));
    }
    let (train, test) = all.split(cfg.data.train_samples);
    save_dataset(cfg.train_path(), &train)?;
    save_dataset(cfg.test_path(), &test)?;
    println!(
        "wrote {} training and {} test samples ({} classes, {} steps) to {} and {}",
        train.len(),
        test.len(),
        train.class_count,
        train.steps,
        cfg.train_path().display(),
        cfg.test_path().display()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let train = dataset(&cfg.train_path())?;
    let template = toy_template(train.shape, train.class_count, cfg.model.neuron, cfg.stage_seed("template"))?;
    let mut tc = cfg.train.clone();
    tc.seed = cfg.stage_seed("train");
    let started = Instant::now();
    let net = train_toy(&template, &train, &tc)?;
    let took = started.elapsed();
    save_model(cfg.model_path(), &net)?;
    println!(
        "trained {} epochs in {:.1?}; training accuracy {:.4}; model written to {}",
        tc.epochs,
        took,
        accuracy(&net, &train, None)?,
        cfg.model_path().display()
    );
    Ok(())
}

pub fn eval(cfg: &RunConfig, data: &Path) -> Result<()> {
    let net = model(cfg)?;
    let ds = dataset(data)?;
    if ds.is_empty() {
        return Err(anyhow!("{} holds no samples", data.display()));
    }
    let acc = accuracy(&net, &ds, None)?;
    println!(
        "accuracy {acc:.4} ({} of {} samples)",
        (acc * ds.len() as f64).round() as usize,
        ds.len()
    );
    Ok(())
}

pub fn fault_scan(cfg: &RunConfig, data: &Path) -> Result<()> {
    let net = model(cfg)?;
    let ds = dataset(data)?;
    let started = Instant::now();
    let report = fault_campaign(&net, &ds, &cfg.campaign.kinds, cfg.campaign.layers.as_deref())?;
    let csv = cfg.out("fault_report.csv");
    report.write_csv(create(&csv)?)?;
    let svg = cfg.out("fault_heat.svg");
    write_text(&svg, &report.heat_svg(&net))?;
    println!(
        "scanned {} faults over {} samples in {:.1?}; baseline accuracy {:.4}",
        report.entries.len(),
        report.samples,
        started.elapsed(),
        report.baseline
    );
    for &kind in &cfg.campaign.kinds {
        println!("critical {kind}: {}", report.critical_count(kind));
    }
    if let Ok(t) = pick_trojan(&report) {
        let e = report.entry(t, FaultKind::Saturated).expect("picked from the report");
        println!("suggested Trojan {t}: saturated accuracy {:.4} (drop {:.4})", e.accuracy, e.drop);
    }
    println!("wrote {} and {}", csv.display(), svg.display());
    Ok(())
}

pub fn select_pattern(cfg: &RunConfig) -> Result<()> {
    let net = model(cfg)?;
    let trojan = match trojan_from_config(cfg)? {
        Some(t) => t,
        None => {
            let test = dataset(&cfg.test_path())?;
            let report = fault_campaign(&net, &test, &[FaultKind::Saturated], None)?;
            pick_trojan(&report)?
        }
    };
    let all = complete_dataset(cfg)?;
    let rec = record_outputs(&net, &all, trojan)?;
    let p = select_pattern_for(&net, &rec, cfg.pattern.d_max, cfg.pattern.budget)?;
    let check = check_pattern(&rec, &p);
    let file = PatternFile::new(&p, &check, Some(trojan));
    let path = cfg.pattern_path();
    write_json(&path, &file)?;
    println!(
        "Trojan {trojan}: pattern {p} (d = {}, {} distinct final windows in {} samples, {} clean occurrences)",
        p.d(),
        rec.distinct_final_windows(p.d()),
        all.len(),
        check.occurrences
    );
    println!("wrote {}", path.display());
    if !file.verified {
        return Err(VerificationFailed(format!("pattern {p} fails the brute-force check: {check:?}")).into());
    }
    Ok(())
}

fn load_pattern_file(path: &Path) -> Result<PatternFile> {
    let f = File::open(path).with_context(|| format!("opening pattern {}", path.display()))?;
    serde_json::from_reader(std::io::BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))
}

pub fn gen_trigger(cfg: &RunConfig) -> Result<()> {
    let net = model(cfg)?;
    let file = load_pattern_file(&cfg.pattern_path())?;
    let pattern = file.pattern()?;
    let trojan = match trojan_from_config(cfg)? {
        Some(t) => t,
        None => file
            .trojan
            .ok_or_else(|| anyhow!("{} names no Trojan neuron; pass --trojan", cfg.pattern_path().display()))?,
    };
    let all = complete_dataset(cfg)?;
    let rec = record_outputs(&net, &all, trojan)?;
    let mut tc = cfg.trigger.clone();
    tc.seed = cfg.stage_seed("gen-trigger");
    let path = cfg.trigger_path();
    match generate_trigger(&net, trojan, &pattern, Some(&rec), &tc) {
        Ok(a) => {
            save_trigger(&path, &a)?;
            println!(
                "trigger for {trojan} reaches {} with L = 0: {} steps, {} input spikes, {} iterations ({} total) in {} ms",
                a.pattern,
                a.input.steps(),
                a.input.spike_count(),
                a.iterations,
                a.total_iterations,
                a.wall_ms
            );
            if a.pattern_sparsified {
                println!("note: search fell back to the sparser pattern {}", a.pattern);
            }
            println!("wrote {}", path.display());
            Ok(())
        }
        Err(snn_trojan::Error::TriggerExhausted { best_loss, best }) => {
            let best_path = path.with_extension("best.json");
            save_trigger(&best_path, &best)?;
            Err(VerificationFailed(format!(
                "no trigger reached {pattern}; best Hamming distance {best_loss}, written to {}",
                best_path.display()
            ))
            .into())
        }
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct Transition {
    timestep: u64,
    from: FsmState,
    to: FsmState,
}

#[derive(Serialize)]
struct TraceSummary {
    sample: usize,
    events: usize,
    activated_at: Option<u64>,
    fake_spikes: usize,
    final_state: FsmState,
    transitions: Vec<Transition>,
}

#[derive(Serialize)]
struct AttackReport<'a> {
    cores: usize,
    ht_enabled: bool,
    trojan: NeuronAddress,
    pattern: String,
    trigger_steps: usize,
    attack: &'a AttackConfig,
    summary: &'a AttackSummary,
    trace: TraceSummary,
    /// `d * N * 2^d`, as a decimal string since it may exceed 64 bits.
    exhaustive_test_count: Option<String>,
}

pub fn attack(cfg: &RunConfig) -> Result<()> {
    let net = model(cfg)?;
    let trigger_path = cfg.trigger_path();
    let trigger = load_trigger(&trigger_path).with_context(|| format!("loading trigger {}", trigger_path.display()))?;
    let test = dataset(&cfg.test_path())?;
    if test.is_empty() {
        return Err(anyhow!("{} holds no samples", cfg.test_path().display()));
    }
    let ht = cfg.hw.ht.then(|| HtConfig {
        trojan: trigger.trojan,
        pattern: trigger.pattern.clone(),
    });
    let system = build_system(&net, cfg.hw.cores, ht)?;
    let summary = attack_dataset(&system, &test, &trigger.input, &cfg.hw.attack)?;

    let k = cfg.hw.trace_sample;
    let sample = test
        .samples
        .get(k)
        .ok_or_else(|| anyhow!("trace sample {k} out of range for {} test samples", test.len()))?;
    let mut traced = system.clone();
    let traced_cfg = AttackConfig {
        record_trace: true,
        ..cfg.hw.attack.clone()
    };
    let outcome = run_attack_sequence(&mut traced, &sample.input, &trigger.input, &traced_cfg)?;
    let trace = outcome.trace.expect("recording was requested");
    trace.check()?;
    let trace_path = cfg.out("trace.jsonl");
    trace.save(&trace_path)?;

    let diff_csv = cfg.out("spike_diff.csv");
    summary.diff.write_csv(create(&diff_csv)?)?;
    let diff_svg = cfg.out("spike_diff.svg");
    write_text(&diff_svg, &summary.diff.svg("Spike count change after activation"))?;

    let count = exhaustive_test_count_for(&net, trigger.pattern.d());
    let report = AttackReport {
        cores: cfg.hw.cores,
        ht_enabled: cfg.hw.ht,
        trojan: trigger.trojan,
        pattern: trigger.pattern.to_string(),
        trigger_steps: trigger.input.steps(),
        attack: &cfg.hw.attack,
        summary: &summary,
        trace: TraceSummary {
            sample: k,
            events: trace.len(),
            activated_at: outcome.activated_at,
            fake_spikes: trace.fake_spikes(),
            final_state: traced.fsm_state(),
            transitions: trace
                .fsm_transitions()
                .into_iter()
                .map(|(timestep, from, to)| Transition { timestep, from, to })
                .collect(),
        },
        exhaustive_test_count: count.map(|c| c.to_string()),
    };
    let report_path = cfg.out("attack_report.json");
    write_json(&report_path, &report)?;

    println!(
        "{} test samples on {} cores, Trojan {} ({}): accuracy {:.4} -> {:.4}, {} predictions flipped, {} activations",
        summary.samples,
        cfg.hw.cores,
        trigger.trojan,
        if cfg.hw.ht { "armed" } else { "absent" },
        summary.accuracy_before,
        summary.accuracy_after,
        summary.flipped,
        summary.activated
    );
    match outcome.activated_at {
        Some(t) => println!(
            "sample {k}: latched at timestep {t}, {} fake spikes in the final phase, FSM ended in {:?}",
            outcome.fake_spikes_after,
            traced.fsm_state()
        ),
        None => println!("sample {k}: trigger checker never latched"),
    }
    match count {
        Some(c) => println!(
            "exhaustive test of every neuron for this pattern length: d*N*2^d = {c} input patterns (d = {}, N = {})",
            trigger.pattern.d(),
            net.neuron_count()
        ),
        None => println!("exhaustive test count exceeds 128 bits"),
    }
    println!(
        "wrote {}, {}, {} and {}",
        report_path.display(),
        diff_csv.display(),
        diff_svg.display(),
        trace_path.display()
    );
    Ok(())
}

pub fn verify(cfg: &RunConfig) -> Result<()> {
    let net = model(cfg)?;
    let trigger_path = cfg.trigger_path();
    let trigger = load_trigger(&trigger_path).with_context(|| format!("loading trigger {}", trigger_path.display()))?;
    let all = complete_dataset(cfg)?;
    let pattern_path = cfg.pattern_path();
    if pattern_path.exists() {
        let file = load_pattern_file(&pattern_path)?;
        let p = file.pattern()?;
        let trojan = file.trojan.unwrap_or(trigger.trojan);
        let rec = record_outputs(&net, &all, trojan)?;
        let check = check_pattern(&rec, &p);
        println!(
            "pattern {p} at {trojan}: refractory legal {}, min final-window distance {:?}, clean occurrences {}",
            check.refractory_legal, check.min_final_distance, check.occurrences
        );
        if !check.passes() {
            return Err(VerificationFailed(format!("pattern {p} fails the brute-force check")).into());
        }
    }
    let r = verify_trigger(&net, &trigger, &all)?;
    println!(
        "trigger for {} yields window {} (Hamming distance {}); pattern absent from {} clean samples",
        trigger.trojan, r.window, r.hamming, r.samples
    );
    println!("verification passed");
    Ok(())
}
