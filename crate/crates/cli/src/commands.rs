use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context as _, Result};
use heatmap_core::bench::{fit_rows, run_sweep, write_rows, SweepConfig};
use heatmap_core::dp::{dp_experiment, heatmap_pairs, paper_epsilon_grid, write_heatmap_pairs, write_report, DpConfig, ExperimentConfig};
use heatmap_core::ingest::{aggregate_checkins, ingest_counts, read_checkins, TowerRegistry};
use heatmap_core::masking::derive_seed;
use heatmap_core::protocol::wire::{mib, MAX_PAYLOAD};
use heatmap_core::protocol::{
    advisory_w, client_finalize, client_prepare, context_for, ideal_f_cov, keygen_for, IndexMapping, Ledger, Message,
    Period, Policy, Server, ServerConfig, TARGET_CONTRIBUTIONS,
};
use heatmap_core::{master_seed, CdrMatrix, CoreError, ThreadBudget};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde_json::json;

use crate::files;
use crate::plot;
use crate::{
    AggregateArgs, BenchArgs, Command, DecryptArgs, DpEvalArgs, EncryptArgs, IngestArgs, KeygenArgs, MapArgs,
    OracleArgs, Rejected, ServeArgs, ServerArgs, SubmitArgs,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Keygen(a) => keygen(a),
        Command::Map(a) => map(a),
        Command::Ingest(a) => ingest(a),
        Command::EncryptQuery(a) => encrypt_query(a),
        Command::Serve(a) => serve(a),
        Command::Submit(a) => submit(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Decrypt(a) => decrypt(a),
        Command::DpEval(a) => dp_eval(a),
        Command::Bench(a) => bench(a),
        Command::Oracle(a) => oracle(a),
    }
}

fn rng(seed: Option<u64>) -> ChaCha20Rng {
    match seed {
        Some(s) => ChaCha20Rng::seed_from_u64(s),
        None => ChaCha20Rng::from_rng(&mut rand::rng()),
    }
}

fn threads(n: usize) -> ThreadBudget {
    ThreadBudget::new(n)
}

fn period(s: &str) -> Result<Period> {
    Ok(Period::parse(s)?)
}

fn emit(v: serde_json::Value) {
    println!("{v}");
}

fn keygen(a: KeygenArgs) -> Result<()> {
    let ctx = context_for(&a.params)?;
    let keys = keygen_for(&ctx, a.mask.on(), &mut rng(a.seed))?;
    let (sk, ek) = files::save_keys(&a.out, &keys)?;
    emit(json!({
        "params": a.params,
        "masked": a.mask.on(),
        "rotations": keys.eval.row_indices().len(),
        "secret_bytes": sk,
        "eval_bytes": ek,
        "galois_mib": mib(keys.eval.galois_encoded_size(&ctx)),
        "relin_mib": mib(keys.eval.relin_encoded_size(&ctx)),
    }));
    Ok(())
}

fn map(a: MapArgs) -> Result<()> {
    let subs = files::read_lines(&a.subscribers)?;
    let mapping = IndexMapping::build(&subs, a.seed)?;
    let mut w = files::create(&a.out)?;
    mapping.write_csv(&mut w)?;
    w.flush()?;
    emit(json!({ "subscribers": mapping.len() }));
    Ok(())
}

fn load_registry(path: Option<&Path>) -> Result<Option<TowerRegistry>> {
    path.map(|p| -> Result<TowerRegistry> {
        let f = File::open(p).with_context(|| format!("cannot read {}", p.display()))?;
        Ok(TowerRegistry::read(BufReader::new(f))?)
    })
    .transpose()
}

fn load_towers(path: Option<&Path>) -> Result<Option<Vec<String>>> {
    Ok(load_registry(path)?.map(|r| r.ids().to_vec()))
}

fn ingest(a: IngestArgs) -> Result<()> {
    let registry = load_registry(a.registry.as_deref())?;
    let mut data = if let Some(p) = &a.counts {
        let f = File::open(p).with_context(|| format!("cannot read {}", p.display()))?;
        ingest_counts(BufReader::new(f), registry, a.delta_q)?
    } else {
        let p = a.checkins.as_ref().expect("clap requires one input");
        let f = File::open(p).with_context(|| format!("cannot read {}", p.display()))?;
        let checkins = read_checkins(BufReader::new(f))?;
        let range = a.period.as_deref().map(period).transpose()?.map(|p| (p.start, p.end));
        aggregate_checkins(&checkins, registry, a.delta_q, range)?
    };
    if let Some(mp) = &a.mapping {
        let mapping = files::load_mapping(mp)?;
        if mapping.len() != data.users.len() {
            bail!("mapping has {} subscribers, data has {}", mapping.len(), data.users.len());
        }
        data.matrix = data.matrix.permute_rows(&mapping.order_for(&data.users)?)?;
        data.users = (0..mapping.len()).map(|i| mapping.subscriber(i).unwrap_or_default().to_string()).collect();
    }
    let ctx = context_for(&a.params)?;
    let t = ctx.params().t();
    files::save_matrix(&a.out, &data.matrix, t)?;
    if let Some(p) = &a.users_out {
        files::write(p, (data.users.join("\n") + "\n").as_bytes())?;
    }
    if let Some(p) = &a.towers_out {
        let mut w = files::create(p)?;
        data.towers.write(&mut w)?;
        w.flush()?;
    }
    if data.clamped > 0 {
        eprintln!("warning: {} entries clamped to the cap", data.clamped);
    }
    let advisory = advisory_w(&data.matrix.column_supports(), data.matrix.rows(), TARGET_CONTRIBUTIONS);
    emit(json!({
        "rows": data.matrix.rows(),
        "towers": data.matrix.cols(),
        "clamped": data.clamped,
        "max_entry": data.matrix.max_entry(),
        "advisory_w_min": advisory,
    }));
    Ok(())
}

fn query_vector(mapping: Option<&Path>, patients: Option<&Path>, indicator: Option<&Path>) -> Result<Vec<u64>> {
    match (mapping, patients, indicator) {
        (_, _, Some(i)) => files::read_indicator(i),
        (Some(m), Some(p), None) => {
            let mapping = files::load_mapping(m)?;
            Ok(mapping.indicator(&files::read_lines(p)?)?)
        }
        _ => bail!("give --mapping with --patients, or --indicator"),
    }
}

fn encrypt_query(a: EncryptArgs) -> Result<()> {
    let keys = files::load_keys(&a.keys)?;
    let x = query_vector(a.mapping.as_deref(), a.patients.as_deref(), a.indicator.as_deref())?;
    let mut req = client_prepare(&keys, &x, a.mask.on(), &a.jurisdiction, period(&a.period)?, &mut rng(a.seed))?;
    if let Some(w) = a.w {
        req.w = w;
    }
    let sizes = req.sizes()?;
    let (w, blocks) = (req.w, req.blocks.len());
    Message::Request(req).write_file(&a.out)?;
    emit(json!({
        "w": w,
        "blocks": blocks,
        "ciphertext_mib": mib(sizes.ciphertexts),
        "galois_mib": mib(sizes.galois_keys),
        "relin_mib": mib(sizes.relin_key),
        "request_mib": mib(sizes.total),
        "request_bytes": sizes.total,
    }));
    Ok(())
}

fn build_server(a: &ServerArgs) -> Result<Server> {
    let matrix = files::load_matrix(&a.matrix)?;
    let mut cfg = ServerConfig::new(&a.params);
    cfg.masked = a.mask.on();
    cfg.dp = match a.epsilon {
        Some(e) => DpConfig::new(e, a.delta_q)?,
        None => DpConfig::disabled(),
    };
    cfg.threads = threads(a.threads);
    cfg.cache_bytes = a.cache_bytes;
    cfg.policy = Policy {
        w_min: a.w_min,
        jurisdictions: a.jurisdictions.as_ref().map(|j| j.iter().cloned().collect::<BTreeSet<_>>()),
        collection: a.collection.as_deref().map(period).transpose()?,
    };
    let ledger = match &a.ledger {
        Some(p) => Ledger::open(p)?,
        None => Ledger::in_memory(),
    };
    Ok(Server::new(cfg, Arc::new(matrix), ledger)?)
}

/// Handles one message; rejections become REJECT replies, not errors.
fn answer(server: &Server, msg: Message, seed: &[u8; 32]) -> Result<(Message, serde_json::Value)> {
    let (reply, report) = server.handle(msg, seed)?;
    let log = match (&reply, report) {
        (Message::Reject { reason, detail }, _) => json!({ "status": "rejected", "reason": reason.as_str(), "detail": detail }),
        (_, Some(r)) => json!({
            "status": "ok",
            "n_v": r.n_v,
            "n_o": r.n_o,
            "matmuls": r.matmul.matmuls,
            "skipped_tiles": r.matmul.skipped_tiles,
            "row_rotations": r.counts.row_rotations,
            "ct_ct_mults": r.counts.ct_ct_mults,
            "seconds": r.elapsed.as_secs_f64(),
        }),
        _ => json!({ "status": "ok" }),
    };
    Ok((reply, log))
}

fn aggregate(a: AggregateArgs) -> Result<()> {
    let server = build_server(&a.server)?;
    let msg = Message::read_file(&a.request)?;
    let (reply, log) = answer(&server, msg, &master_seed(a.server.seed))?;
    reply.write_file(&a.out)?;
    emit(log);
    if let Message::Reject { reason, detail } = reply {
        return Err(Rejected { reason, detail }.into());
    }
    Ok(())
}

fn session(server: &Server, stream: &mut TcpStream, seed: &[u8; 32]) -> Result<serde_json::Value> {
    let msg = match Message::read_from(&mut *stream) {
        Ok(m) => m,
        Err(CoreError::Wire(detail)) => {
            let reply = Message::Reject {
                reason: heatmap_core::protocol::RejectReason::Malformed,
                detail: detail.clone(),
            };
            reply.write_to(&mut *stream)?;
            return Ok(json!({ "status": "rejected", "reason": "MALFORMED", "detail": detail }));
        }
        Err(e) => return Err(e.into()),
    };
    let (reply, log) = answer(server, msg, seed)?;
    reply.write_to(&mut *stream)?;
    stream.flush()?;
    Ok(log)
}

fn serve(a: ServeArgs) -> Result<()> {
    let server = build_server(&a.server)?;
    server.warm_cache();
    let listener = TcpListener::bind(&a.listen).with_context(|| format!("cannot listen on {}", a.listen))?;
    emit(json!({ "listening": listener.local_addr()?.to_string() }));
    std::io::stdout().flush()?;
    let mut served = 0usize;
    for conn in listener.incoming() {
        let mut stream = conn?;
        // session i draws its mask and noise from seed + i
        let seed = master_seed(a.server.seed.wrapping_add(served as u64));
        let mut log = match session(&server, &mut stream, &seed) {
            Ok(l) => l,
            Err(e) => json!({ "status": "error", "detail": format!("{e:#}") }),
        };
        log["session"] = served.into();
        emit(log);
        std::io::stdout().flush()?;
        served += 1;
        if a.sessions != 0 && served >= a.sessions {
            break;
        }
    }
    Ok(())
}

fn submit(a: SubmitArgs) -> Result<()> {
    let frame = files::read(&a.request)?;
    let msg = Message::decode(&frame)?;
    if !matches!(msg, Message::Request(_)) {
        bail!(CoreError::Wire("request file does not hold a REQUEST".into()));
    }
    let mut stream = TcpStream::connect(&a.connect).with_context(|| format!("cannot connect to {}", a.connect))?;
    stream.write_all(&frame)?;
    stream.flush()?;
    let (kind, payload) = heatmap_core::protocol::wire::read_frame(&mut stream, MAX_PAYLOAD)?;
    let reply = Message::decode_payload(kind, &payload)?;
    reply.write_file(&a.out)?;
    match reply {
        Message::Reject { reason, detail } => Err(Rejected { reason, detail }.into()),
        Message::Response(r) => {
            emit(json!({ "status": "ok", "blocks": r.blocks.len(), "k": r.k }));
            Ok(())
        }
        Message::Request(_) => Err(CoreError::Wire("server answered with a REQUEST".into()).into()),
    }
}

fn decrypt(a: DecryptArgs) -> Result<()> {
    let sk = files::load_secret(&a.keys)?;
    let resp = match Message::read_file(&a.response)? {
        Message::Response(r) => r,
        Message::Reject { reason, detail } => return Err(Rejected { reason, detail }.into()),
        Message::Request(_) => return Err(CoreError::Wire("expected a RESPONSE, found a REQUEST".into()).into()),
    };
    let k = usize::try_from(resp.k).map_err(|_| anyhow!("tower count out of range"))?;
    let heat = client_finalize(&sk, &resp, k)?;
    if !heat.consistent {
        eprintln!("warning: slot rows disagree; the response may be corrupted");
    }
    let towers = load_towers(a.towers.as_deref())?;
    files::write_heatmap(&a.out, towers.as_deref(), &heat.values)?;
    if let Some(p) = &a.png {
        plot::write_png(p, &heat.values)?;
    }
    emit(json!({
        "towers": k,
        "consistent": heat.consistent,
        "total": heat.values.iter().sum::<i64>(),
    }));
    Ok(())
}

fn dp_eval(a: DpEvalArgs) -> Result<()> {
    let z = files::load_matrix(&a.matrix)?;
    let w_max = a.w_max.unwrap_or(a.w_min);
    if a.w_step == 0 || w_max < a.w_min {
        bail!(CoreError::Config(format!("bad weight range {}..={w_max} step {}", a.w_min, a.w_step)));
    }
    let epsilons = a.epsilon.map_or_else(paper_epsilon_grid, |e| vec![e]);
    let seed = master_seed(a.seed);
    let cfg = ExperimentConfig {
        w_range: (a.w_min..=w_max).step_by(a.w_step as usize).map(|w| w as usize).collect(),
        epsilons: epsilons.clone(),
        trials: a.trials,
        delta_q: a.delta_q,
        seed,
        parallel: threads(a.threads).is_parallel(),
    };
    let budget = threads(a.threads);
    let rows = heatmap_core::par::install(budget, || dp_experiment(&z, &cfg))?;
    let mut w = files::create(&a.out)?;
    write_report(&rows, &mut w)?;
    w.flush()?;
    if let Some(p) = &a.pairs {
        let mut r = ChaCha20Rng::from_seed(derive_seed(&seed, "pairs/query"));
        let ones = rand::seq::index::sample(&mut r, z.rows(), (a.w_min as usize).clamp(1, z.rows()));
        let mut x = vec![0u64; z.rows()];
        for i in ones {
            x[i] = 1;
        }
        let (orig, noised) = heatmap_pairs(&z, &x, &epsilons, a.delta_q, derive_seed(&seed, "pairs"))?;
        let towers = load_towers(a.towers.as_deref())?.unwrap_or_else(|| (0..z.cols()).map(|c| c.to_string()).collect());
        let mut w = files::create(p)?;
        write_heatmap_pairs(&towers, &orig, &epsilons, &noised, &mut w)?;
        w.flush()?;
    }
    emit(json!({ "rows": rows.len(), "epsilons": epsilons.len() }));
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let cfg = SweepConfig {
        params: a.params,
        masked: a.mask.on(),
        sizes: a.sizes,
        threads: threads(a.threads),
        seed: a.seed,
        cache_bytes: a.cache_bytes,
        repeats: a.repeats,
    };
    let rows = run_sweep(&cfg)?;
    match &a.out {
        Some(p) => {
            let mut w = files::create(p)?;
            write_rows(&rows, &mut w)?;
            w.flush()?;
        }
        None => write_rows(&rows, std::io::stdout())?,
    }
    let fit = fit_rows(&rows);
    let summary = json!({
        "points": rows.len(),
        "slope_secs_per_matmul": fit.map(|f| f.slope),
        "intercept_secs": fit.map(|f| f.intercept),
        "r2": fit.map(|f| f.r2),
    });
    if a.out.is_some() {
        emit(summary);
    } else {
        eprintln!("{summary}");
    }
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<()> {
    let ctx = context_for(&a.params)?;
    let z: CdrMatrix = files::load_matrix(&a.matrix)?;
    let x = query_vector(a.mapping.as_deref(), a.patients.as_deref(), a.indicator.as_deref())?;
    let w = a.w.unwrap_or_else(|| x.iter().sum());
    let dp = match a.epsilon {
        Some(e) => DpConfig::new(e, a.delta_q)?,
        None => DpConfig::disabled(),
    };
    let values = ideal_f_cov(&x, w, &z, &dp, &master_seed(a.seed), ctx.params().t())?;
    let towers = load_towers(a.towers.as_deref())?;
    files::write_heatmap(&a.out, towers.as_deref(), &values)?;
    emit(json!({ "towers": values.len(), "w": w }));
    Ok(())
}
