//! Seeded generator of loan tables and firm networks with planted contagion.
//!
//! Each company has a latent health score `z` and a primary distress flag.
//! Tabular features are noisy views of both. Payment partners are chosen by
//! sector (never by health), so without contagion linked firms' labels are
//! independent. Contagion adds the distress of related companies' loans seen
//! in the loan's look-back snapshots to the default logit.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use super::{CompanySize, DataError, LoanRecord, LoanTable, OwnershipRow, RawColumn, TransactionRow};
use crate::config::{Config, ConfigError};
use crate::graph::{GraphBuilder, Layer, LayerKind};
use crate::month::YearMonth;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contagion {
    /// Per weighted distressed FT neighbor loan, either direction.
    pub ft_coeff: f64,
    /// Extra weight for distressed neighbors that paid the borrower.
    pub direction_asymmetry: f64,
    /// Per distressed co-owned neighbor loan.
    pub co_coeff: f64,
}

impl Contagion {
    pub fn none() -> Self {
        Self {
            ft_coeff: 0.0,
            direction_asymmetry: 0.0,
            co_coeff: 0.0,
        }
    }
}

impl Default for Contagion {
    fn default() -> Self {
        Self {
            ft_coeff: 0.05,
            direction_asymmetry: 0.8,
            co_coeff: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_companies: usize,
    pub start: YearMonth,
    pub months: u32,
    pub base_default_rate: f64,
    pub contagion: Contagion,
    /// Loading of latent health on the default logit.
    pub health_coeff: f64,
    /// Own-distress effect on the default logit.
    pub distress_coeff: f64,
    pub mean_loans: f64,
    pub mean_partners: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_companies: 5000,
            start: YearMonth::new(2019, 1).expect("valid month"),
            months: 34,
            base_default_rate: 0.0363,
            contagion: Contagion::default(),
            health_coeff: 1.2,
            distress_coeff: 2.0,
            mean_loans: 4.0,
            mean_partners: 5.0,
            seed: 42,
        }
    }
}

/// Keys read by [`SynthConfig::from_config`].
pub const SYNTH_KEYS: &[&str] = &[
    "companies",
    "start",
    "months",
    "base_default_rate",
    "ft_coeff",
    "direction_asymmetry",
    "co_coeff",
    "health_coeff",
    "distress_coeff",
    "mean_loans",
    "mean_partners",
    "synth_seed",
];

impl SynthConfig {
    /// Reads generator keys from `config`, defaulting absent ones.
    pub fn from_config(config: &Config) -> Result<Self, ConfigError> {
        let d = Self::default();
        Ok(Self {
            n_companies: config.parse_or("companies", d.n_companies)?,
            start: config.parse_or("start", d.start)?,
            months: config.parse_or("months", d.months)?,
            base_default_rate: config.parse_or("base_default_rate", d.base_default_rate)?,
            contagion: Contagion {
                ft_coeff: config.parse_or("ft_coeff", d.contagion.ft_coeff)?,
                direction_asymmetry: config.parse_or("direction_asymmetry", d.contagion.direction_asymmetry)?,
                co_coeff: config.parse_or("co_coeff", d.contagion.co_coeff)?,
            },
            health_coeff: config.parse_or("health_coeff", d.health_coeff)?,
            distress_coeff: config.parse_or("distress_coeff", d.distress_coeff)?,
            mean_loans: config.parse_or("mean_loans", d.mean_loans)?,
            mean_partners: config.parse_or("mean_partners", d.mean_partners)?,
            seed: config.parse_or("synth_seed", d.seed)?,
        })
    }

    pub fn to_config(&self) -> Config {
        let mut c = Config::new();
        c.set("companies", self.n_companies.to_string());
        c.set("start", self.start.to_string());
        c.set("months", self.months.to_string());
        c.set("base_default_rate", self.base_default_rate.to_string());
        c.set("ft_coeff", self.contagion.ft_coeff.to_string());
        c.set("direction_asymmetry", self.contagion.direction_asymmetry.to_string());
        c.set("co_coeff", self.contagion.co_coeff.to_string());
        c.set("health_coeff", self.health_coeff.to_string());
        c.set("distress_coeff", self.distress_coeff.to_string());
        c.set("mean_loans", self.mean_loans.to_string());
        c.set("mean_partners", self.mean_partners.to_string());
        c.set("synth_seed", self.seed.to_string());
        c
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthData {
    pub loans: LoanTable,
    pub transactions: Vec<TransactionRow>,
    pub ownerships: Vec<OwnershipRow>,
    /// Calibrated logit intercept.
    pub intercept: f64,
    pub default_rate: f64,
}

const HEALTH: [&str; 30] = [
    "avg_bal_lia",
    "mon_install_amt",
    "tot_rev_gen",
    "end_cur_year",
    "avg_bal_act",
    "ent_own_equ",
    "cov_rat_tax",
    "net_profit",
    "ebitda",
    "cur_ratio",
    "quick_ratio",
    "debt_equ_ratio",
    "int_cov_ratio",
    "roa",
    "roe",
    "op_margin",
    "cash_bal",
    "rec_days",
    "pay_days",
    "inv_turn",
    "fixed_assets",
    "tot_assets",
    "tot_lia",
    "short_debt",
    "long_debt",
    "wc_amt",
    "sales_growth",
    "emp_count",
    "age_years",
    "cred_lim_use",
];
const NOISE: [&str; 7] = [
    "branch_code_num",
    "app_channel_score",
    "doc_count",
    "contact_count",
    "prod_count",
    "acc_count",
    "rel_months",
];
/// Near-copies of a health feature, named with its index.
const TWINS: [(&str, usize); 4] = [
    ("adj_tot_rev_gen", 2),
    ("avg_bal_act_12m", 4),
    ("tot_assets_adj", 21),
    ("ent_own_equ_book", 5),
];
/// (name, loading on health, loading on distress)
const FLAGS: [(&str, f64, f64); 8] = [
    ("if_pre_app", 0.9, -0.8),
    ("if_desc_gsi", -0.3, 1.2),
    ("if_wel_dep_acc", 0.2, 0.0),
    ("if_restruct", -0.4, 1.6),
    ("if_bur_ind", -0.5, 1.0),
    ("if_trans_ind", 0.3, 0.8),
    ("if_guarantee", 0.1, 0.0),
    ("if_online_app", 0.0, 0.0),
];
const DISTRESS: [&str; 3] = ["ovd_amt_ratio", "ovd_days_max", "num_ovd_evt"];
/// (name, null fraction)
const SPARSE: [(&str, f64); 8] = [
    ("mgmt_score", 0.02),
    ("sector_risk", 0.02),
    ("ext_rating_score", 0.20),
    ("gsi_score", 0.15),
    ("audit_score", 0.25),
    ("prev_def_amt", 0.65),
    ("guar_val", 0.55),
    ("legacy_code_val", 0.98),
];
const LEGAL_FORMS: [&str; 4] = ["coop", "other", "sa", "sl"];
const SECTORS: usize = 8;

struct Company {
    id: String,
    size: CompanySize,
    sector: usize,
    health: f64,
    distress: bool,
    /// Company-level noise per feature slot.
    base: Vec<f64>,
    act_flag: Option<&'static str>,
    legal_form: &'static str,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn stream(seed: u64, k: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

fn validate(config: &SynthConfig) -> Result<(), DataError> {
    let bad = |msg: String| Err(DataError::Invalid(msg));
    if config.n_companies < 10 {
        return bad(format!("n_companies must be at least 10, got {}", config.n_companies));
    }
    if config.months < 7 {
        return bad(format!("months must cover the 6-month look-back plus one, got {}", config.months));
    }
    if !(config.base_default_rate > 0.0 && config.base_default_rate < 0.5) {
        return bad(format!("base_default_rate must lie in (0, 0.5), got {}", config.base_default_rate));
    }
    if !(config.mean_loans >= 1.0 && config.mean_partners >= 0.0) {
        return bad("mean_loans must be >= 1 and mean_partners >= 0".into());
    }
    let c = config.contagion;
    if ![c.ft_coeff, c.direction_asymmetry, c.co_coeff, config.health_coeff, config.distress_coeff]
        .iter()
        .all(|v| v.is_finite())
    {
        return bad("coefficients must be finite".into());
    }
    Ok(())
}

/// Generates loans, transactions and ownership rows; a pure function of `config`.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SynthData, DataError> {
    validate(config)?;
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let months = config.months as usize;
    let slots = HEALTH.len() + NOISE.len() + DISTRESS.len() + FLAGS.len() + SPARSE.len();

    let mut rng = stream(config.seed, 1);
    let companies: Vec<Company> = (0..config.n_companies)
        .map(|i| {
            let size = if rng.random::<f64>() < 0.7 {
                CompanySize::Small
            } else {
                CompanySize::Medium
            };
            let health = std.sample(&mut rng) - if size == CompanySize::Small { 0.3 } else { 0.0 };
            let distress = rng.random::<f64>() < logistic(-2.6 - 0.8 * health);
            let base = (0..slots).map(|_| std.sample(&mut rng)).collect();
            let u: f64 = rng.random();
            let act_flag = if u < 0.2 {
                None
            } else if rng.random::<f64>() < logistic(0.6 + 0.5 * health) {
                Some("Y")
            } else {
                Some("N")
            };
            let legal_form = *LEGAL_FORMS.choose(&mut rng).expect("non-empty");
            Company {
                id: format!("C{:05}", i + 1),
                size,
                sector: rng.random_range(0..SECTORS),
                health,
                distress,
                base,
                act_flag,
                legal_form,
            }
        })
        .collect();

    // loan placement: a borrowing window of 6-12 months per company
    let mut rng = stream(config.seed, 2);
    let extra = Poisson::new(config.mean_loans - 1.0).ok();
    let mut placements: Vec<(usize, usize)> = Vec::new();
    for c in 0..companies.len() {
        let start = rng.random_range(0..months);
        let len = rng.random_range(6..=12).min(months - start);
        let count = 1 + extra.map_or(0, |p| p.sample(&mut rng) as usize);
        for _ in 0..count {
            placements.push((start + rng.random_range(0..len), c));
        }
    }
    placements.sort();

    let mut rng = stream(config.seed, 3);
    let loading: Vec<f64> = (0..HEALTH.len())
        .map(|_| rng.random_range(0.25..0.8) * if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    let lognormal: Vec<bool> = (0..HEALTH.len()).map(|k| k % 3 != 2).collect();

    let mut rng = stream(config.seed, 4);
    let n_loans = placements.len();
    let mut columns: Vec<Vec<Option<f64>>> = vec![Vec::with_capacity(n_loans); slots + TWINS.len()];
    let mut act_flags = Vec::with_capacity(n_loans);
    let mut legal_forms = Vec::with_capacity(n_loans);
    let mut records = Vec::with_capacity(n_loans);
    for (i, &(m, c)) in placements.iter().enumerate() {
        let co = &companies[c];
        let d = if co.distress { 1.0 } else { 0.0 };
        let mut row: Vec<Option<f64>> = Vec::with_capacity(columns.len());
        for k in 0..HEALTH.len() {
            let latent = loading[k] * co.health + co.base[k] + 0.2 * std.sample(&mut rng);
            let v = if lognormal[k] {
                (8.0 + 0.8 * latent).exp()
            } else {
                latent
            };
            row.push(Some(v));
        }
        for k in 0..NOISE.len() {
            let b = co.base[HEALTH.len() + k] + 0.2 * std.sample(&mut rng);
            row.push(Some(if k % 2 == 0 { (3.0 + 0.5 * b).exp() } else { b }));
        }
        let off = HEALTH.len() + NOISE.len();
        for k in 0..DISTRESS.len() {
            let s = 1.3 * d + co.base[off + k] + 0.2 * std.sample(&mut rng);
            row.push(Some(match k {
                0 => logistic(2.0 * s - 3.0),
                1 => (30.0 * (s - 0.5)).max(0.0).round(),
                _ => (s.max(0.0) * 2.0).floor(),
            }));
        }
        let off = off + DISTRESS.len();
        for (k, &(_, a, b)) in FLAGS.iter().enumerate() {
            let p = logistic(-1.0 + a * co.health + b * d + 0.5 * co.base[off + k]);
            row.push(Some(if rng.random::<f64>() < p { 1.0 } else { 0.0 }));
        }
        let off = off + FLAGS.len();
        for (k, &(_, null_fraction)) in SPARSE.iter().enumerate() {
            let v = 0.3 * co.health * if k % 2 == 0 { 1.0 } else { -1.0 } + co.base[off + k] + 0.2 * std.sample(&mut rng);
            let present = rng.random::<f64>() >= null_fraction;
            row.push(present.then_some(v));
        }
        for &(_, src) in &TWINS {
            let orig = row[src].expect("health features are never null");
            let v = if lognormal[src] {
                orig * (0.05 * std.sample(&mut rng)).exp()
            } else {
                orig + 0.05 * std.sample(&mut rng)
            };
            row.push(Some(v));
        }
        for (col, v) in columns.iter_mut().zip(row) {
            col.push(v);
        }
        act_flags.push(co.act_flag.map(String::from));
        legal_forms.push(Some(co.legal_form.to_string()));
        records.push(LoanRecord {
            loan_id: format!("L{:06}", i + 1),
            company_id: co.id.clone(),
            origination_month: config.start.plus(m as i64),
            company_size: co.size,
            default: false,
        });
    }

    let (transactions, ownerships) = relations(config, &companies);

    // contagion exposure of each loan through its own snapshot edges
    let company_of: std::collections::HashMap<&str, usize> =
        companies.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
    let builder = GraphBuilder::new(&records, &transactions, &ownerships);
    let layers = [LayerKind::ft(true, true), LayerKind::co()];
    let mut ft_all = vec![0.0; n_loans];
    let mut ft_in = vec![0.0; n_loans];
    let mut co_exp = vec![0.0; n_loans];
    let mut weight_sum = 0.0;
    let mut weight_n = 0usize;
    let sets: Vec<_> = builder
        .months()
        .into_iter()
        .map(|m| builder.build(m, &layers))
        .collect::<Result<_, _>>()
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    for set in &sets {
        for e in set.snapshots.iter().flat_map(|s| &s.edges).filter(|e| e.layer == Layer::Ft) {
            weight_sum += e.weight;
            weight_n += 1;
        }
    }
    let mean_weight = if weight_n > 0 { weight_sum / weight_n as f64 } else { 1.0 };
    for set in &sets {
        let distressed = |node: usize| {
            let row = set.node_rows[node];
            companies[company_of[records[row].company_id.as_str()]].distress
        };
        for e in set.snapshots.iter().flat_map(|s| &s.edges) {
            let (target, other) = if set.target_mask[e.src] { (e.src, e.dst) } else { (e.dst, e.src) };
            if !distressed(other) {
                continue;
            }
            let row = set.node_rows[target];
            match e.layer {
                Layer::Ft => {
                    let w = e.weight / mean_weight;
                    ft_all[row] += w;
                    if e.dst == target {
                        ft_in[row] += w;
                    }
                }
                Layer::Co => co_exp[row] += 1.0,
            }
        }
    }

    let mut rng = stream(config.seed, 6);
    let draws: Vec<f64> = (0..n_loans).map(|_| rng.random()).collect();
    let c = config.contagion;
    let rest: Vec<f64> = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let co = &companies[company_of[r.company_id.as_str()]];
            -config.health_coeff * co.health
                + if co.distress { config.distress_coeff } else { 0.0 }
                + c.ft_coeff * ft_all[i]
                + c.direction_asymmetry * ft_in[i]
                + c.co_coeff * co_exp[i]
        })
        .collect();
    let rate_at = |b: f64| {
        let hits = rest.iter().zip(&draws).filter(|(r, u)| **u < logistic(b + **r)).count();
        hits as f64 / n_loans as f64
    };
    let target = config.base_default_rate;
    let (mut lo, mut hi) = (-30.0, 30.0);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if rate_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let intercept = if (rate_at(lo) - target).abs() <= (rate_at(hi) - target).abs() {
        lo
    } else {
        hi
    };
    let achieved = rate_at(intercept);
    if (achieved - target).abs() > 0.005 {
        return Err(DataError::Infeasible {
            reason: format!("target default rate {target} not reachable within 0.5 pp"),
            achieved,
        });
    }
    for (i, r) in records.iter_mut().enumerate() {
        r.default = draws[i] < logistic(intercept + rest[i]);
    }

    let mut names: Vec<String> = HEALTH
        .iter()
        .chain(&NOISE)
        .chain(&DISTRESS)
        .chain(FLAGS.iter().map(|f| &f.0))
        .chain(SPARSE.iter().map(|s| &s.0))
        .chain(TWINS.iter().map(|t| &t.0))
        .map(|s| s.to_string())
        .collect();
    let mut raw: Vec<RawColumn> = columns.into_iter().map(RawColumn::Numeric).collect();
    names.push("if_act_flag".into());
    raw.push(RawColumn::Categorical(act_flags));
    names.push("legal_form".into());
    raw.push(RawColumn::Categorical(legal_forms));
    Ok(SynthData {
        loans: LoanTable::new(records, names, raw)?,
        transactions,
        ownerships,
        intercept,
        default_rate: achieved,
    })
}

/// Payment pairs chosen by sector homophily and quarterly-listed ownership clusters.
fn relations(config: &SynthConfig, companies: &[Company]) -> (Vec<TransactionRow>, Vec<OwnershipRow>) {
    let mut rng = stream(config.seed, 5);
    let n = companies.len();
    let mut by_sector: Vec<Vec<usize>> = vec![Vec::new(); SECTORS];
    for (i, c) in companies.iter().enumerate() {
        by_sector[c.sector].push(i);
    }
    let partners = Poisson::new(config.mean_partners.max(1e-9)).expect("positive mean");
    let mut pairs: BTreeSet<(usize, usize)> = BTreeSet::new();
    for i in 0..n {
        let k = if config.mean_partners > 0.0 { partners.sample(&mut rng) as usize } else { 0 };
        for _ in 0..k {
            let j = if rng.random::<f64>() < 0.7 {
                *by_sector[companies[i].sector].choose(&mut rng).expect("own sector")
            } else {
                rng.random_range(0..n)
            };
            if j != i {
                // orientation = dominant payment direction
                pairs.insert(if rng.random::<bool>() { (i, j) } else { (j, i) });
            }
        }
    }
    let mut transactions = Vec::new();
    let normal: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");
    let mut seen = BTreeSet::new();
    for &(payer, payee) in &pairs {
        if !seen.insert((payer.min(payee), payer.max(payee))) {
            continue;
        }
        let mu: f64 = 6.5 + 1.2 * normal.sample(&mut rng);
        for m in 0..config.months as i64 {
            let month = config.start.plus(m);
            for (src, dst, p) in [(payer, payee, 0.5), (payee, payer, 0.15)] {
                if rng.random::<f64>() < p {
                    transactions.push(TransactionRow {
                        src_company: companies[src].id.clone(),
                        dst_company: companies[dst].id.clone(),
                        month,
                        amount: (mu + 0.5 * normal.sample(&mut rng)).exp().round(),
                    });
                }
            }
        }
    }
    transactions.sort_by(|a, b| (a.month, &a.src_company, &a.dst_company).cmp(&(b.month, &b.src_company, &b.dst_company)));

    let mut ownerships = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let clustered = n / 4;
    let mut k = 0;
    while k + 1 < clustered {
        let size = rng.random_range(2..=4).min(clustered - k);
        let members = &order[k..k + size];
        for m in (0..config.months as i64).step_by(3) {
            for a in 0..members.len() {
                for b in a + 1..members.len() {
                    let (x, y) = (members[a].min(members[b]), members[a].max(members[b]));
                    ownerships.push(OwnershipRow {
                        company_a: companies[x].id.clone(),
                        company_b: companies[y].id.clone(),
                        month: config.start.plus(m),
                    });
                }
            }
        }
        k += size;
    }
    ownerships.sort_by(|a, b| (a.month, &a.company_a, &a.company_b).cmp(&(b.month, &b.company_a, &b.company_b)));
    (transactions, ownerships)
}
