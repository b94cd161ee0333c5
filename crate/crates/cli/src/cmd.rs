use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use pktact::compiler::{compile, CompileConfig, CompileReport, PayloadMode};
use pktact::lift::{
    lift_trace, read_actions, write_actions, ActionHeader, ActionRecord, LiftConfig, LiftReport,
};
use pktact::manifest::{FileDigest, RunManifest};
use pktact::metrics::{compare, MetricReport, TraceSummary};
use pktact::packet::{decode_frame, encode_frame, CanonicalPacket, DecodeOutcome};
use pktact::pcap::{read_pcap, Frame, PcapWriter, DEFAULT_SNAPLEN};
use pktact::shard::{assign_splits, plan_shards, verify_roundtrip};
use pktact::synth::{generate, SynthConfig};
use pktact::validate::{validate, ValidateOptions, ValidationReport};

pub enum Failure {
    Input(anyhow::Error),
    Validation(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

type Result<T> = std::result::Result<T, Failure>;

#[derive(Debug, Parser)]
#[command(name = "pktact", version, about = "Packet-action trace codec toolkit")]
pub struct Cli {
    /// Where to write the run manifest. Defaults to `<output>.manifest.json` when the command
    /// has an output path.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Worker threads for per-shard work.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Lift a capture into a JSON Lines action file.
    Lift(LiftArgs),
    /// Compile an action file into a synthetic capture.
    Compile(CompileArgs),
    /// Lift, compile, re-lift and compare a capture against its own rendering.
    Roundtrip(RoundtripArgs),
    /// Compare reference and decoded shard directories.
    Metrics(MetricsArgs),
    /// Split a capture into session-preserving shards.
    Shard(ShardArgs),
    /// Generate a synthetic capture with a ground-truth manifest.
    Synth(SynthArgs),
    /// Check a capture for transport legality.
    Validate(ValidateArgs),
}

#[derive(Debug, Args, Serialize)]
struct LiftArgs {
    input: PathBuf,
    /// Output action file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Active-flow vocabulary size.
    #[arg(long, default_value_t = pktact::lift::DEFAULT_SLOTS)]
    slots: u32,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum PayloadArg {
    Synthetic,
    Zero,
}

#[derive(Debug, Args, Serialize)]
struct SaltArg {
    /// Template salt.
    #[arg(long, env = "PKTACT_SALT", default_value_t = 0)]
    salt: u64,
}

#[derive(Debug, Args, Serialize)]
struct CompileArgs {
    actions: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    salt: SaltArg,
    /// Write headers only; records keep their original length.
    #[arg(long)]
    truncate: bool,
    /// Abort on the first action that needs repair.
    #[arg(long)]
    strict: bool,
    /// Timestamp of the first packet, microseconds. Defaults to the action header's epoch.
    #[arg(long)]
    epoch: Option<u64>,
    #[arg(long, value_enum, default_value_t = PayloadArg::Synthetic)]
    payload: PayloadArg,
    /// Compile report path.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct RoundtripArgs {
    input: PathBuf,
    #[command(flatten)]
    salt: SaltArg,
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write the compiled capture.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = pktact::lift::DEFAULT_SLOTS)]
    slots: u32,
}

#[derive(Debug, Args, Serialize)]
struct MetricsArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    dec: PathBuf,
    /// Pairing manifest `{"pairs": [{"shard_id", "ref", "dec"}]}`; files pair by name otherwise.
    #[arg(long)]
    pairs: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write a CSV flattening.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ShardArgs {
    input: PathBuf,
    /// Maximum packets per shard.
    #[arg(long)]
    budget: u64,
    #[arg(long)]
    out: PathBuf,
    /// Train, validation and test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
    splits: Vec<f64>,
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    tcp_flows: Option<u32>,
    #[arg(long)]
    udp_flows: Option<u32>,
    #[arg(long)]
    icmp_flows: Option<u32>,
    #[arg(long)]
    retransmission_rate: Option<f64>,
    #[arg(long)]
    reorder_rate: Option<f64>,
    #[arg(long)]
    loss_rate: Option<f64>,
    /// Full generator configuration as JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for `trace.pcap` and `truth.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct ValidateArgs {
    input: PathBuf,
    /// Action file the capture was compiled from; its unseen-ACK marks exempt those ACKs.
    #[arg(long)]
    actions: Option<PathBuf>,
    /// Require synthetic (10/8, fd00::/8) addresses.
    #[arg(long)]
    require_private: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build()
        .context("building worker pool")?;
    let manifest_path = cli.manifest.clone();
    pool.install(|| match cli.command {
        Command::Lift(a) => cmd_lift(a, manifest_path),
        Command::Compile(a) => cmd_compile(a, manifest_path),
        Command::Roundtrip(a) => cmd_roundtrip(a, manifest_path),
        Command::Metrics(a) => cmd_metrics(a, manifest_path),
        Command::Shard(a) => cmd_shard(a, manifest_path),
        Command::Synth(a) => cmd_synth(a, manifest_path),
        Command::Validate(a) => cmd_validate(a, manifest_path),
    })
}

fn config_value<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn digest(path: &Path) -> anyhow::Result<FileDigest> {
    FileDigest::of_file(path).with_context(|| format!("hashing {}", path.display()))
}

fn finish_manifest(
    m: &RunManifest,
    explicit: Option<PathBuf>,
    output: Option<&Path>,
) -> anyhow::Result<()> {
    let path = explicit.or_else(|| {
        output.map(|o| {
            let mut s = o.as_os_str().to_owned();
            s.push(".manifest.json");
            PathBuf::from(s)
        })
    });
    let json = serde_json::to_string_pretty(m)?;
    match path {
        Some(p) => fs::write(&p, json + "\n")
            .with_context(|| format!("writing manifest {}", p.display()))?,
        None => info!("run manifest: {json}"),
    }
    Ok(())
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut out = io::stdout().lock();
            writeln!(out, "{json}")?;
        }
    }
    Ok(())
}

fn read_frames(path: &Path) -> anyhow::Result<Vec<Frame>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_pcap(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

/// Decoded packets plus per-reason skip counts.
struct Decoded {
    packets: Vec<CanonicalPacket>,
    /// Index into the frame list for each decoded packet.
    frame_index: Vec<usize>,
    skips: BTreeMap<String, u64>,
}

fn decode_frames(frames: &[Frame]) -> Decoded {
    let mut d = Decoded {
        packets: Vec::with_capacity(frames.len()),
        frame_index: Vec::with_capacity(frames.len()),
        skips: BTreeMap::new(),
    };
    for (i, f) in frames.iter().enumerate() {
        match decode_frame(&f.data, f.ts_us) {
            DecodeOutcome::Packet(p) => {
                d.packets.push(p);
                d.frame_index.push(i);
            }
            DecodeOutcome::Skip(reason) => {
                let name = serde_json::to_value(reason)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_else(|| format!("{reason:?}"));
                *d.skips.entry(format!("skip_{name}")).or_default() += 1;
            }
        }
    }
    d
}

fn write_packets(path: &Path, packets: &[CanonicalPacket], truncate: bool) -> anyhow::Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = PcapWriter::new(BufWriter::new(f), DEFAULT_SNAPLEN, truncate)?;
    for p in packets {
        let frame =
            encode_frame(p).map_err(|e| anyhow!("encoding packet at {} us: {e}", p.ts_us))?;
        w.write_frame(p.ts_us, &frame)?;
    }
    w.into_inner()?.flush()?;
    Ok(())
}

fn write_frames<'a>(
    path: &Path,
    frames: impl IntoIterator<Item = &'a Frame>,
) -> anyhow::Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = PcapWriter::new(BufWriter::new(f), DEFAULT_SNAPLEN, false)?;
    for fr in frames {
        w.write_frame(fr.ts_us, &fr.data)?;
    }
    w.into_inner()?.flush()?;
    Ok(())
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

fn add_lift_counters(m: &mut RunManifest, r: &LiftReport) {
    m.counter("packets", r.packets);
    m.counter("flows_opened", r.flows_opened);
    m.counter("slot_reuses", r.slot_reuses);
    m.counter("evictions", r.evictions);
    m.counter("idle_releases", r.idle_releases);
    m.counter("close_releases", r.close_releases);
}

fn add_compile_counters(m: &mut RunManifest, r: &CompileReport) {
    m.counter("compiled_packets", r.packets);
    m.counter("flows_instantiated", r.flows_instantiated);
    m.counter("mid_capture_instantiations", r.mid_capture_instantiations);
    for (k, v) in &r.coercions {
        m.counter(&format!("coercion_{k}"), *v);
    }
}

fn lift_config(slots: u32) -> LiftConfig {
    LiftConfig {
        slots,
        ..Default::default()
    }
}

fn cmd_lift(a: LiftArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut m = RunManifest::new("lift", config_value(&a));
    let t0 = Instant::now();
    let frames = read_frames(&a.input)?;
    m.inputs.push(digest(&a.input)?);
    let d = decode_frames(&frames);
    let lifted =
        lift_trace(&d.packets, &lift_config(a.slots)).map_err(|e| anyhow!("lifting: {e}"))?;
    match &a.out {
        Some(p) => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            let mut w = BufWriter::new(f);
            write_actions(&mut w, Some(&lifted.header), &lifted.actions)
                .map_err(|e| anyhow!("{e}"))?;
            w.flush().context("flushing action file")?;
            m.outputs.push(digest(p)?);
        }
        None => write_actions(io::stdout().lock(), Some(&lifted.header), &lifted.actions)
            .map_err(|e| anyhow!("{e}"))?,
    }
    add_lift_counters(&mut m, &lifted.report);
    for (k, v) in &d.skips {
        m.counter(k, *v);
    }
    m.timings_ms.insert("total".into(), ms_since(t0));
    info!(
        "lifted {} packets into {} flows ({} skipped)",
        lifted.report.packets,
        lifted.report.flows_opened,
        d.skips.values().sum::<u64>()
    );
    finish_manifest(&m, manifest, a.out.as_deref())?;
    Ok(())
}

fn load_actions(path: &Path) -> anyhow::Result<(Option<ActionHeader>, Vec<ActionRecord>)> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_actions(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn cmd_compile(a: CompileArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut m = RunManifest::new("compile", config_value(&a));
    let t0 = Instant::now();
    let (header, actions) = load_actions(&a.actions)?;
    m.inputs.push(digest(&a.actions)?);
    if let Some(h) = &header {
        if let Some((i, bad)) = actions
            .iter()
            .enumerate()
            .find(|(_, x)| x.flow_token >= h.slots)
        {
            return Err(anyhow!(
                "action {i}: flow_token {} outside the header's V={}",
                bad.flow_token,
                h.slots
            )
            .into());
        }
    }
    let cfg = CompileConfig {
        salt: a.salt.salt,
        epoch_us: a.epoch.or(header.as_ref().map(|h| h.epoch_us)).unwrap_or(0),
        payload: if a.truncate {
            PayloadMode::None
        } else {
            match a.payload {
                PayloadArg::Synthetic => PayloadMode::Synthetic,
                PayloadArg::Zero => PayloadMode::Zero,
            }
        },
        strict: a.strict,
    };
    let out = compile(&actions, &cfg).map_err(|e| Failure::Validation(e.to_string()))?;
    write_packets(&a.out, &out.packets, a.truncate)?;
    m.outputs.push(digest(&a.out)?);
    add_compile_counters(&mut m, &out.report);
    m.timings_ms.insert("total".into(), ms_since(t0));
    if let Some(r) = &a.report {
        write_json(&out.report, Some(r))?;
        m.outputs.push(digest(r)?);
    }
    info!(
        "compiled {} packets, {} coercions",
        out.report.packets,
        out.report.total_coercions()
    );
    finish_manifest(&m, manifest, Some(&a.out))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct RoundtripReport {
    packets: u64,
    skipped: u64,
    actions: usize,
    relifted_actions: usize,
    action_exact_match: f64,
    first_mismatch: Option<usize>,
    lift: LiftReport,
    compile: CompileReport,
    validation: ValidationReport,
    metrics: MetricReport,
    /// The reference compared with itself; every distance should be zero.
    self_metrics: MetricReport,
}

fn cmd_roundtrip(a: RoundtripArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut m = RunManifest::new("roundtrip", config_value(&a));
    let t0 = Instant::now();
    let frames = read_frames(&a.input)?;
    m.inputs.push(digest(&a.input)?);
    let d = decode_frames(&frames);
    let cfg = lift_config(a.slots);
    let lifted = lift_trace(&d.packets, &cfg).map_err(|e| anyhow!("lifting: {e}"))?;
    m.timings_ms.insert("lift".into(), ms_since(t0));

    let t1 = Instant::now();
    let ccfg = CompileConfig {
        salt: a.salt.salt,
        epoch_us: lifted.header.epoch_us,
        ..Default::default()
    };
    let compiled = compile(&lifted.actions, &ccfg).map_err(|e| anyhow!("compiling: {e}"))?;
    m.timings_ms.insert("compile".into(), ms_since(t1));

    let mut encoded = Vec::with_capacity(compiled.packets.len());
    for p in &compiled.packets {
        let data = encode_frame(p).map_err(|e| anyhow!("encoding: {e}"))?;
        encoded.push(Frame {
            ts_us: p.ts_us,
            orig_len: data.len() as u32,
            data,
        });
    }
    if let Some(out) = &a.out {
        write_frames(out, &encoded)?;
        m.outputs.push(digest(out)?);
    }
    let dec = decode_frames(&encoded);
    let relifted = lift_trace(&dec.packets, &cfg).map_err(|e| anyhow!("re-lifting: {e}"))?;
    let matches = lifted
        .actions
        .iter()
        .zip(&relifted.actions)
        .filter(|(x, y)| x == y)
        .count();
    let first_mismatch = lifted
        .actions
        .iter()
        .zip(&relifted.actions)
        .position(|(x, y)| x != y)
        .or_else(|| {
            (lifted.actions.len() != relifted.actions.len())
                .then(|| lifted.actions.len().min(relifted.actions.len()))
        });
    let denom = lifted.actions.len().max(relifted.actions.len()).max(1);

    let unseen: Vec<bool> = compiled
        .source
        .iter()
        .map(|&i| lifted.actions[i].tcp_ack_unseen)
        .collect();
    let validation = validate(
        &encoded,
        &ValidateOptions {
            ack_unseen: Some(&unseen),
            require_private: true,
        },
    );

    let ref_summary = TraceSummary::from_frames(&frames);
    let dec_summary = TraceSummary::from_frames(&encoded);
    let single = |s: &TraceSummary| BTreeMap::from([("trace".to_string(), s.clone())]);
    let metrics =
        compare(&single(&ref_summary), &single(&dec_summary)).map_err(|e| anyhow!("{e}"))?;
    let self_metrics =
        compare(&single(&ref_summary), &single(&ref_summary)).map_err(|e| anyhow!("{e}"))?;

    let report = RoundtripReport {
        packets: d.packets.len() as u64,
        skipped: d.skips.values().sum(),
        actions: lifted.actions.len(),
        relifted_actions: relifted.actions.len(),
        action_exact_match: matches as f64 / denom as f64,
        first_mismatch,
        lift: lifted.report.clone(),
        compile: compiled.report.clone(),
        validation,
        metrics,
        self_metrics,
    };
    write_json(&report, a.report.as_deref())?;
    if let Some(r) = &a.report {
        m.outputs.push(digest(r)?);
    }
    add_lift_counters(&mut m, &lifted.report);
    add_compile_counters(&mut m, &compiled.report);
    for (k, v) in &d.skips {
        m.counter(k, *v);
    }
    m.timings_ms.insert("total".into(), ms_since(t0));
    info!(
        "roundtrip: {:.4}% actions exact, {} violations",
        report.action_exact_match * 100.0,
        report.validation.violations.len()
    );
    finish_manifest(&m, manifest, a.report.as_deref().or(a.out.as_deref()))?;
    if !report.validation.is_valid() {
        return Err(Failure::Validation(format!(
            "{} violations in the compiled capture",
            report.validation.violations.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct PairsFile {
    pairs: Vec<Pair>,
}

#[derive(Debug, Deserialize)]
struct Pair {
    shard_id: String,
    #[serde(rename = "ref")]
    reference: String,
    dec: String,
}

fn pcap_files(dir: &Path) -> anyhow::Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e == "pcap") {
            let name = p
                .file_name()
                .expect("listed file has a name")
                .to_string_lossy()
                .into_owned();
            out.insert(name, p);
        }
    }
    Ok(out)
}

fn summarize_all(items: &[(String, PathBuf)]) -> anyhow::Result<BTreeMap<String, TraceSummary>> {
    items
        .par_iter()
        .map(|(id, path)| Ok((id.clone(), TraceSummary::from_frames(&read_frames(path)?))))
        .collect()
}

type Named = (String, PathBuf);

fn cmd_metrics(a: MetricsArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut m = RunManifest::new("metrics", config_value(&a));
    let t0 = Instant::now();
    let (refs, decs): (Vec<Named>, Vec<Named>) = match &a.pairs {
        Some(pf) => {
            let text =
                fs::read_to_string(pf).with_context(|| format!("reading {}", pf.display()))?;
            let parsed: PairsFile = serde_json::from_str(&text)
                .with_context(|| format!("parsing pairing manifest {}", pf.display()))?;
            m.inputs.push(digest(pf)?);
            parsed
                .pairs
                .into_iter()
                .map(|p| {
                    (
                        (p.shard_id.clone(), a.reference.join(&p.reference)),
                        (p.shard_id, a.dec.join(&p.dec)),
                    )
                })
                .unzip()
        }
        None => (
            pcap_files(&a.reference)?.into_iter().collect(),
            pcap_files(&a.dec)?.into_iter().collect(),
        ),
    };
    for (_, p) in refs.iter().chain(&decs) {
        if p.exists() {
            m.inputs.push(digest(p)?);
        }
    }
    let r = summarize_all(&refs)?;
    let d = summarize_all(&decs)?;
    let report = compare(&r, &d).map_err(|e| anyhow!("pairing: {e}"))?;
    write_json(&report, a.out.as_deref())?;
    if let Some(o) = &a.out {
        m.outputs.push(digest(o)?);
    }
    if let Some(c) = &a.csv {
        fs::write(c, report.to_csv()).with_context(|| format!("writing {}", c.display()))?;
        m.outputs.push(digest(c)?);
    }
    m.counter("shards", report.per_shard.len() as u64);
    m.timings_ms.insert("total".into(), ms_since(t0));
    finish_manifest(&m, manifest, a.out.as_deref())?;
    Ok(())
}

fn cmd_shard(a: ShardArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut m = RunManifest::new("shard", config_value(&a));
    let t0 = Instant::now();
    let fractions: [f64; 3] = a
        .splits
        .clone()
        .try_into()
        .map_err(|_| anyhow!("--splits needs exactly three fractions"))?;
    let frames = read_frames(&a.input)?;
    m.inputs.push(digest(&a.input)?);
    let d = decode_frames(&frames);
    let mut plan = plan_shards(&d.packets, a.budget).map_err(|e| anyhow!("{e}"))?;
    plan.splits = Some(assign_splits(plan.shards.len(), fractions).map_err(|e| anyhow!("{e}"))?);
    for w in &plan.warnings {
        warn!("{w}");
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    plan.shards.par_iter().try_for_each(|s| {
        let path = a.out.join(&s.file);
        write_frames(
            &path,
            s.packet_indices.iter().map(|&i| &frames[d.frame_index[i]]),
        )
    })?;

    let shard_packets: Vec<Vec<CanonicalPacket>> = plan
        .shards
        .par_iter()
        .map(|s| Ok(decode_frames(&read_frames(&a.out.join(&s.file))?).packets))
        .collect::<anyhow::Result<_>>()?;
    verify_roundtrip(&d.packets, &shard_packets)
        .map_err(|e| Failure::Validation(format!("shard roundtrip: {e}")))?;

    for s in &plan.shards {
        m.outputs.push(digest(&a.out.join(&s.file))?);
    }
    let plan_path = a.out.join("plan.json");
    write_json(&plan, Some(&plan_path))?;
    m.outputs.push(digest(&plan_path)?);
    m.counter("shards", plan.shards.len() as u64);
    m.counter(
        "oversized_shards",
        plan.shards.iter().filter(|s| s.oversized).count() as u64,
    );
    for (k, v) in &d.skips {
        m.counter(k, *v);
    }
    m.timings_ms.insert("total".into(), ms_since(t0));
    info!("wrote {} shards to {}", plan.shards.len(), a.out.display());
    finish_manifest(
        &m,
        manifest.or_else(|| Some(a.out.join("run.manifest.json"))),
        None,
    )?;
    Ok(())
}

fn cmd_synth(a: SynthArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut m = RunManifest::new("synth", config_value(&a));
    let t0 = Instant::now();
    let mut cfg = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            m.inputs.push(digest(p)?);
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthConfig::default(),
    };
    cfg.seed = a.seed;
    if let Some(v) = a.tcp_flows {
        cfg.tcp_flows = v;
    }
    if let Some(v) = a.udp_flows {
        cfg.udp_flows = v;
    }
    if let Some(v) = a.icmp_flows {
        cfg.icmp_flows = v;
    }
    if let Some(v) = a.retransmission_rate {
        cfg.retransmission_rate = v;
    }
    if let Some(v) = a.reorder_rate {
        cfg.reorder_rate = v;
    }
    if let Some(v) = a.loss_rate {
        cfg.loss_rate = v;
    }
    cfg.check().map_err(|e| anyhow!("synth config: {e}"))?;
    m.config = serde_json::to_value(&cfg).unwrap_or(serde_json::Value::Null);
    let trace = generate(&cfg);
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let pcap = a.out.join("trace.pcap");
    write_packets(&pcap, &trace.packets, false)?;
    let truth = a.out.join("truth.json");
    write_json(&trace.manifest, Some(&truth))?;
    m.outputs.push(digest(&pcap)?);
    m.outputs.push(digest(&truth)?);
    m.counter("packets", trace.manifest.packets);
    m.counter("sessions", trace.manifest.sessions.len() as u64);
    m.timings_ms.insert("total".into(), ms_since(t0));
    info!(
        "generated {} packets in {} sessions",
        trace.manifest.packets,
        trace.manifest.sessions.len()
    );
    finish_manifest(
        &m,
        manifest.or_else(|| Some(a.out.join("run.manifest.json"))),
        None,
    )?;
    Ok(())
}

fn cmd_validate(a: ValidateArgs, manifest: Option<PathBuf>) -> Result<()> {
    let mut m = RunManifest::new("validate", config_value(&a));
    let frames = read_frames(&a.input)?;
    m.inputs.push(digest(&a.input)?);
    let unseen = match &a.actions {
        Some(p) => {
            let (_, actions) = load_actions(p)?;
            m.inputs.push(digest(p)?);
            // Which actions became packets depends only on the actions, not on salt or payload.
            let dry = compile(&actions, &CompileConfig::default()).map_err(|e| anyhow!("{e}"))?;
            if dry.packets.len() != frames.len() {
                return Err(anyhow!(
                    "{} has {} records but the actions compile to {} packets",
                    a.input.display(),
                    frames.len(),
                    dry.packets.len()
                )
                .into());
            }
            Some(
                dry.source
                    .iter()
                    .map(|&i| actions[i].tcp_ack_unseen)
                    .collect::<Vec<_>>(),
            )
        }
        None => None,
    };
    let report = validate(
        &frames,
        &ValidateOptions {
            ack_unseen: unseen.as_deref(),
            require_private: a.require_private,
        },
    );
    write_json(&report, a.out.as_deref())?;
    if let Some(o) = &a.out {
        m.outputs.push(digest(o)?);
    }
    m.counter("records", report.records as u64);
    m.counter("violations", report.violations.len() as u64);
    finish_manifest(&m, manifest, a.out.as_deref())?;
    if !report.is_valid() {
        let first = &report.violations[0];
        bail_validation(format!(
            "{} violations; first at record {}: {:?}",
            report.violations.len(),
            first.index,
            first.kind
        ))?;
    }
    Ok(())
}

fn bail_validation(msg: String) -> Result<()> {
    Err(Failure::Validation(msg))
}
