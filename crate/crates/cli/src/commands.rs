use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use rmtq::bvh::{uniform_grid, BvhChannel, EntanglementEvent};
use rmtq::dos::{DensityOfStates, Tabulated};
use rmtq::format::g12;
use rmtq::meanfield;
use rmtq::oracle::{self, EnvSampling, FiniteNModel, Picture, Topology};
use rmtq::quantifiers::{self, QuantifierReport, CSV_COLUMNS};
use rmtq::states::{csv_header, BellFamily, InitialCondition, TwoQubitState};
use rmtq::C64;

use crate::args::*;
use crate::output::Artifact;
use crate::{usage, CliError};

type Res<T> = Result<T, CliError>;

pub fn dispatch(cmd: &Command, threads: usize, out: &mut dyn Write) -> Res<()> {
    let started = Instant::now();
    let art = match cmd {
        Command::Evolve(a) => evolve(a, out)?,
        Command::Stationary(a) => stationary(a, out)?,
        Command::Sweep(a) => sweep(a, out)?,
        Command::MarkovCheck(a) => markov_check(a, out)?,
        Command::FiniteN(a) => finite_n(a, out)?,
        Command::VarianceScan(a) => variance_scan(a, out)?,
        Command::Resolvent(a) => resolvent(a, out)?,
        Command::Compare(a) => compare(a, out)?,
    };
    art.write(started, threads)
}

fn params<T: Serialize>(args: &T) -> Value {
    serde_json::to_value(args).expect("arguments serialize")
}

fn build_dos(a: &DosArgs) -> Res<DensityOfStates> {
    Ok(match a.dos {
        DosKind::Lorentzian => DensityOfStates::lorentzian(a.gamma)?,
        DosKind::Flat => DensityOfStates::flat(a.gamma0)?,
        DosKind::Tabulated => {
            let path = a
                .dos_file
                .as_ref()
                .ok_or_else(|| usage("--dos tabulated needs --dos-file"))?;
            DensityOfStates::Tabulated(Tabulated::load(path)?)
        }
    })
}

fn dos_inert(a: &DosArgs) -> Vec<&'static str> {
    match a.dos {
        DosKind::Lorentzian => vec!["gamma0", "dos-file"],
        DosKind::Flat => vec!["gamma", "dos-file"],
        DosKind::Tabulated => vec!["gamma", "gamma0"],
    }
}

/// Channel parameters that drop out: a flat density gives the same rates at
/// every energy and zero phases.
fn channel_inert(a: &ChannelArgs) -> Vec<&'static str> {
    let mut v = dos_inert(&a.dos);
    if a.dos.dos == DosKind::Flat {
        v.extend(["env-energy", "s"]);
    }
    v
}

fn build_init(a: &InitArgs) -> Res<InitialCondition> {
    let beta = C64::from_polar((1.0 - a.alpha * a.alpha).max(0.0).sqrt(), a.beta_phase);
    let c = match a.init {
        InitKind::Product => InitialCondition::product(a.alpha),
        InitKind::Bell1 => InitialCondition::Bell1 {
            alpha1: a.alpha,
            beta1: beta,
        },
        InitKind::Bell2 => InitialCondition::Bell2 {
            alpha2: a.alpha,
            beta2: beta,
        },
        InitKind::Werner => InitialCondition::Werner {
            k: if a.werner_family == 1 {
                BellFamily::One
            } else {
                BellFamily::Two
            },
            alpha3: a.alpha3,
            alpha: a.alpha,
            beta,
        },
    };
    c.validate()?;
    Ok(c)
}

fn init_inert(a: &InitArgs) -> Vec<&'static str> {
    match a.init {
        InitKind::Product => vec!["beta-phase", "alpha3", "werner-family"],
        InitKind::Bell1 | InitKind::Bell2 => vec!["alpha3", "werner-family"],
        InitKind::Werner => vec![],
    }
}

fn channel(a: &ChannelArgs) -> Res<BvhChannel> {
    Ok(BvhChannel::from_dos(&build_dos(&a.dos)?, a.env_energy, a.s)?)
}

fn events_json(events: &[EntanglementEvent]) -> Value {
    Value::Array(
        events
            .iter()
            .map(|e| json!({"kind": e.kind.label(), "tau": e.tau}))
            .collect(),
    )
}

fn quantifier_header() -> String {
    CSV_COLUMNS.join(",")
}

fn quantifier_row(r: &QuantifierReport) -> String {
    r.csv_fields().map(g12).join(",")
}

fn evolve(a: &EvolveArgs, out: &mut dyn Write) -> Res<Artifact> {
    let ch = channel(&a.channel)?;
    let cond = build_init(&a.init)?;
    let taus = uniform_grid(a.grid.tau_max, a.grid.steps)?;
    let tr = ch.trajectory(&cond, &taus)?;
    let mut csv = String::new();
    for e in &tr.events {
        writeln!(csv, "# {} tau={}", e.kind.label(), g12(e.tau)).unwrap();
    }
    writeln!(csv, "tau,{},{}", csv_header(), quantifier_header()).unwrap();
    for ((t, s), r) in tr.taus.iter().zip(&tr.states).zip(&tr.reports) {
        writeln!(csv, "{},{},{}", g12(*t), s.csv_row(), quantifier_row(r)).unwrap();
    }
    let last = tr.reports.last().expect("grid has points");
    writeln!(
        out,
        "tau={} concurrence={} discord={} entropy={} events={}",
        g12(a.grid.tau_max),
        g12(last.concurrence),
        g12(last.discord),
        g12(last.entropy),
        tr.events.len()
    )?;
    let mut art = Artifact::new("evolve", params(a));
    art.inert(channel_inert(&a.channel));
    art.inert(init_inert(&a.init));
    art.inert(["out"]);
    art.extra.insert("events".into(), events_json(&tr.events));
    art.csv = Some((a.out.clone(), csv));
    Ok(art)
}

fn state_summary(s: &TwoQubitState, r: &QuantifierReport) -> Res<String> {
    let c = s.to_blocks()?.to_a_coords();
    Ok(format!(
        "rho11={} A1={} rho44={} A2={} |A3|={} |rho14|={} negativity={} concurrence={} discord={} entropy={}",
        g12(c.rho11),
        g12(c.a1),
        g12(c.rho44),
        g12(c.a2),
        g12(c.a3.norm()),
        g12(c.rho14.norm()),
        g12(r.negativity),
        g12(r.concurrence),
        g12(r.discord),
        g12(r.entropy)
    ))
}

fn stationary(a: &StationaryArgs, out: &mut dyn Write) -> Res<Artifact> {
    let ch = channel(&a.channel)?;
    let rho0 = build_init(&a.init)?.build()?;
    let st = ch.stationary_state(&rho0)?;
    let rep = quantifiers::report(&st)?;
    writeln!(out, "{}", state_summary(&st, &rep)?)?;
    let mut art = Artifact::new("stationary", params(a));
    art.inert(channel_inert(&a.channel));
    art.inert(init_inert(&a.init));
    art.inert(["out"]);
    if let Some(path) = &a.out {
        let csv = format!(
            "tau,{},{}\ninf,{},{}\n",
            csv_header(),
            quantifier_header(),
            st.csv_row(),
            quantifier_row(&rep)
        );
        art.csv = Some((path.clone(), csv));
    }
    Ok(art)
}

fn linspace(from: f64, to: f64, count: usize) -> Res<Vec<f64>> {
    if count == 0 || !from.is_finite() || !to.is_finite() {
        return Err(usage("range needs finite endpoints and at least one value"));
    }
    if count == 1 {
        if from != to {
            return Err(usage("a single-value range needs --from equal to --to"));
        }
        return Ok(vec![from]);
    }
    Ok((0..count)
        .map(|i| from + (to - from) * i as f64 / (count - 1) as f64)
        .collect())
}

fn quantity(q: Quantity, s: &TwoQubitState) -> rmtq::Result<f64> {
    match q {
        Quantity::Negativity => quantifiers::negativity(s),
        Quantity::Concurrence => quantifiers::concurrence(s),
        Quantity::Discord => quantifiers::discord(s),
        Quantity::Entropy => quantifiers::entropy(s),
    }
}

fn sweep(a: &SweepArgs, out: &mut dyn Write) -> Res<Artifact> {
    let values = linspace(a.from, a.to, a.count)?;
    let taus = uniform_grid(a.grid.tau_max, a.grid.steps)?;
    if a.param == SweepParam::Gamma && a.channel.dos.dos != DosKind::Lorentzian {
        return Err(usage("sweeping gamma needs --dos lorentzian"));
    }
    let column = |p: f64| -> Res<(Vec<f64>, Vec<EntanglementEvent>)> {
        let mut ch_args = a.channel.clone();
        let mut init = a.init.clone();
        match a.param {
            SweepParam::Alpha0 => (init.init, init.alpha) = (InitKind::Product, p),
            SweepParam::Alpha1 => (init.init, init.alpha) = (InitKind::Bell1, p),
            SweepParam::Alpha2 => (init.init, init.alpha) = (InitKind::Bell2, p),
            SweepParam::Alpha3 => (init.init, init.alpha3) = (InitKind::Werner, p),
            SweepParam::Gamma => ch_args.dos.gamma = p,
            SweepParam::EnvEnergy => ch_args.env_energy = p,
        }
        let ch = channel(&ch_args)?;
        let rho0 = build_init(&init)?.build()?;
        let states: Vec<TwoQubitState> = taus
            .iter()
            .map(|&t| ch.evolve_state(&rho0, t))
            .collect::<rmtq::Result<_>>()?;
        let conc: Vec<f64> = states
            .iter()
            .map(quantifiers::concurrence)
            .collect::<rmtq::Result<_>>()?;
        let col = if a.quantity == Quantity::Concurrence {
            conc.clone()
        } else {
            states
                .iter()
                .map(|s| quantity(a.quantity, s))
                .collect::<rmtq::Result<_>>()?
        };
        let events = ch.entanglement_events(&rho0, &taus, &conc)?;
        Ok((col, events))
    };
    let cols: Vec<(Vec<f64>, Vec<EntanglementEvent>)> =
        values.par_iter().map(|&p| column(p)).collect::<Res<_>>()?;
    let name = serde_json::to_value(a.param).expect("enum serializes");
    let name = name.as_str().expect("string");
    let mut csv = String::new();
    write!(csv, "tau").unwrap();
    for v in &values {
        write!(csv, ",{name}={}", g12(*v)).unwrap();
    }
    csv.push('\n');
    for (i, t) in taus.iter().enumerate() {
        write!(csv, "{}", g12(*t)).unwrap();
        for (col, _) in &cols {
            write!(csv, ",{}", g12(col[i])).unwrap();
        }
        csv.push('\n');
    }
    let boundary: Vec<Value> = values
        .iter()
        .zip(&cols)
        .flat_map(|(v, (_, ev))| {
            ev.iter()
                .map(move |e| json!({"value": v, "kind": e.kind.label(), "tau": e.tau}))
        })
        .collect();
    writeln!(
        out,
        "swept {name} over {} values, {} tau points, {} boundary points",
        values.len(),
        taus.len(),
        boundary.len()
    )?;
    let mut art = Artifact::new("sweep", params(a));
    art.inert(channel_inert(&a.channel));
    match a.param {
        SweepParam::Alpha0 | SweepParam::Alpha1 | SweepParam::Alpha2 => {
            art.inert(["init", "alpha", "alpha3", "werner-family"]);
            if a.param == SweepParam::Alpha0 {
                art.inert(["beta-phase"]);
            }
        }
        SweepParam::Alpha3 => art.inert(["init", "alpha3"]),
        SweepParam::Gamma => {
            art.inert(init_inert(&a.init));
            art.inert(["gamma"]);
        }
        SweepParam::EnvEnergy => {
            art.inert(init_inert(&a.init));
            art.inert(["env-energy"]);
        }
    }
    art.inert(["out"]);
    art.extra.insert("boundary".into(), Value::Array(boundary));
    art.csv = Some((a.out.clone(), csv));
    Ok(art)
}

fn markov_check(a: &MarkovArgs, out: &mut dyn Write) -> Res<Artifact> {
    let d = channel(&a.channel)?.markov_diagnostic();
    let det = match d.det_phi3_inf {
        None => "none".to_string(),
        Some(x) if x.abs() < 1e-12 => "0".to_string(),
        Some(x) => g12(x),
    };
    let residual = if d.max_semigroup_residual <= rmtq::bvh::MarkovDiagnostic::RESIDUAL_TOL {
        "residual<=1e-10".to_string()
    } else {
        format!("residual={}", g12(d.max_semigroup_residual))
    };
    writeln!(
        out,
        "det_phi3_inf={det} {residual} markovian={}",
        d.is_markovian()
    )?;
    Ok(Artifact::new("markov-check", params(a)))
}

fn oracle_model(a: &OracleArgs, n: usize) -> Res<(FiniteNModel, DensityOfStates)> {
    let dos = build_dos(&a.channel.dos)?;
    let sampling = match a.env_sampling {
        SamplingArg::Iid => EnvSampling::Iid,
        SamplingArg::Quantile => EnvSampling::Quantile,
    };
    let topology = match a.topology {
        TopologyArg::Common => Topology::Common,
        TopologyArg::Independent => Topology::Independent,
        TopologyArg::FreeAncilla => Topology::FreeAncilla,
    };
    if !(a.budget_gib > 0.0 && a.budget_gib.is_finite()) {
        return Err(usage("--budget-gib must be positive"));
    }
    let env = oracle::sample_env_spectrum(&dos, n, sampling, a.seed)?;
    let model = FiniteNModel::new(topology, env, build_init(&a.init)?.build()?)?
        .with_s(a.channel.s)?
        .with_v(a.v)?
        .with_target_energy(a.channel.env_energy)?
        .with_seed(a.seed)
        .with_budget((a.budget_gib * (1u64 << 30) as f64) as u64);
    Ok((model, dos))
}

fn oracle_inert(a: &OracleArgs) -> Vec<&'static str> {
    let mut v = dos_inert(&a.channel.dos);
    v.extend(init_inert(&a.init));
    v.push("budget-gib");
    v
}

fn model_extra(art: &mut Artifact, m: &FiniteNModel, dos: &DensityOfStates) -> Res<()> {
    art.extra.insert("env_index".into(), json!(m.env_index()));
    art.extra.insert("env_level_energy".into(), json!(m.env_energy()));
    art.extra.insert(
        "ks_distance".into(),
        json!(oracle::ks_distance(m.env_spectrum(), dos)?),
    );
    Ok(())
}

fn entry_names(prefix: &str) -> String {
    let mut v = Vec::new();
    for i in 1..=4 {
        for j in 1..=4 {
            v.push(format!("{prefix}_rho{i}{j}"));
        }
    }
    v.join(",")
}

fn finite_n(a: &FiniteNArgs, out: &mut dyn Write) -> Res<Artifact> {
    let (model, dos) = oracle_model(&a.oracle, a.n)?;
    let times = uniform_grid(a.t_max, a.steps)?;
    let picture = match a.picture {
        PictureArg::Schrodinger => Picture::Schrodinger,
        PictureArg::Interaction => Picture::Interaction,
    };
    let stats = oracle::ensemble_series(&model, a.oracle.draws, &times, picture)?;
    let v2 = a.oracle.v * a.oracle.v;
    let mut csv = String::new();
    let mean_header = csv_header()
        .split(',')
        .map(|c| format!("mean_{c}"))
        .collect::<Vec<_>>()
        .join(",");
    writeln!(
        csv,
        "t,tau,{mean_header},{},{}",
        entry_names("var"),
        entry_names("stderr")
    )
    .unwrap();
    for st in &stats {
        let var: Vec<String> = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .map(|(i, j)| g12(st.entry_variances[(i, j)]))
            .collect();
        let se: Vec<String> = (0..4)
            .flat_map(|i| (0..4).map(move |j| (i, j)))
            .map(|(i, j)| g12(st.stderr[(i, j)]))
            .collect();
        writeln!(
            csv,
            "{},{},{},{},{}",
            g12(st.time),
            g12(st.time * v2),
            st.mean_state.csv_row(),
            var.join(","),
            se.join(",")
        )
        .unwrap();
    }
    let last = stats.last().expect("grid has points");
    writeln!(
        out,
        "n={} draws={} t={} max_variance={} max_stderr={}",
        a.n,
        a.oracle.draws,
        g12(last.time),
        g12(last.max_variance()),
        g12(last.max_stderr())
    )?;
    let mut art = Artifact::new("finite-n", params(a));
    art.inert(oracle_inert(&a.oracle));
    art.inert(["out"]);
    model_extra(&mut art, &model, &dos)?;
    art.csv = Some((a.out.clone(), csv));
    Ok(art)
}

fn variance_scan(a: &VarianceScanArgs, out: &mut dyn Write) -> Res<Artifact> {
    let n0 = *a.n_list.first().ok_or_else(|| usage("--n-list is empty"))?;
    let (base, dos) = oracle_model(&a.oracle, n0)?;
    let sampling = match a.oracle.env_sampling {
        SamplingArg::Iid => EnvSampling::Iid,
        SamplingArg::Quantile => EnvSampling::Quantile,
    };
    let scan = oracle::variance_scan(&base, &dos, sampling, &a.n_list, a.oracle.draws, a.t)?;
    let mut csv = String::new();
    writeln!(
        csv,
        "# fit total_variance = c * N^-p p={} c={}",
        g12(scan.exponent),
        g12(scan.prefactor)
    )
    .unwrap();
    writeln!(csv, "n,max_variance,total_variance,max_stderr,bound,within_bound").unwrap();
    for p in &scan.points {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            p.n,
            g12(p.stats.max_variance()),
            g12(p.stats.total_variance()),
            g12(p.stats.max_stderr()),
            g12(p.bound),
            p.within_bound()
        )
        .unwrap();
    }
    writeln!(out, "p={} c={}", g12(scan.exponent), g12(scan.prefactor))?;
    let mut art = Artifact::new("variance-scan", params(a));
    art.inert(oracle_inert(&a.oracle));
    art.inert(["out"]);
    art.extra
        .insert("fit".into(), json!({"p": scan.exponent, "c": scan.prefactor}));
    art.csv = Some((a.out.clone(), csv));
    Ok(art)
}

fn resolvent(a: &ResolventArgs, out: &mut dyn Write) -> Res<Artifact> {
    let dos = build_dos(&a.dos)?;
    if a.steps == 0 {
        return Err(usage("--steps must be at least 1"));
    }
    let es = linspace(a.e_from, a.e_to, a.steps + 1)?;
    let samples: Vec<meanfield::ResolventSample> = es
        .par_iter()
        .map(|&e| meanfield::solve(&dos, a.s, a.v, C64::new(e, a.z_imag)))
        .collect::<rmtq::Result<_>>()?;
    let mut csv = String::from("e,re_g_plus,im_g_plus,re_g_minus,im_g_minus\n");
    let mut worst: f64 = 0.0;
    for (e, s) in es.iter().zip(&samples) {
        worst = worst.max(s.residual);
        writeln!(
            csv,
            "{},{},{},{},{}",
            g12(*e),
            g12(s.g_plus.re),
            g12(s.g_plus.im),
            g12(s.g_minus.re),
            g12(s.g_minus.im)
        )
        .unwrap();
    }
    writeln!(out, "points={} max_residual={}", es.len(), g12(worst))?;
    let mut art = Artifact::new("resolvent", params(a));
    art.inert(dos_inert(&a.dos));
    art.inert(["out"]);
    art.extra.insert("max_residual".into(), json!(worst));
    art.csv = Some((a.out.clone(), csv));
    Ok(art)
}

fn compare(a: &CompareArgs, out: &mut dyn Write) -> Res<Artifact> {
    let (model, dos) = oracle_model(&a.oracle, a.n)?;
    let ch = BvhChannel::from_dos(&dos, a.oracle.channel.env_energy, a.oracle.channel.s)?;
    let taus = uniform_grid(a.tau_max, a.steps)?;
    let cmp = oracle::bvh_compare(&model, &ch, a.oracle.draws, &taus)?;
    let names = oracle::INVARIANT_NAMES;
    let mut csv = String::new();
    let col = |p: &str| {
        names
            .iter()
            .map(|n| format!("{p}_{n}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    writeln!(
        csv,
        "tau,invariant_deviation,entry_deviation,max_stderr,{},{}",
        col("oracle"),
        col("channel")
    )
    .unwrap();
    for (i, tau) in taus.iter().enumerate() {
        let o = oracle::picture_invariants(&cmp.oracle[i])?;
        let c = oracle::picture_invariants(&cmp.analytic[i])?;
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            g12(*tau),
            g12(cmp.invariant_deviation[i]),
            g12(cmp.entry_deviation[i]),
            g12(cmp.stderr[i]),
            o.map(g12).join(","),
            c.map(g12).join(",")
        )
        .unwrap();
    }
    writeln!(
        out,
        "max_invariant_deviation={} max_entry_deviation={}",
        g12(cmp.max_invariant_deviation()),
        g12(cmp.max_entry_deviation())
    )?;
    let mut art = Artifact::new("compare", params(a));
    art.inert(oracle_inert(&a.oracle));
    art.inert(["out"]);
    model_extra(&mut art, &model, &dos)?;
    art.extra.insert("alignment".into(), json!(cmp.alignment));
    art.extra.insert(
        "max_invariant_deviation".into(),
        json!(cmp.max_invariant_deviation()),
    );
    art.csv = Some((a.out.clone(), csv));
    Ok(art)
}
