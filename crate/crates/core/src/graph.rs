//! Multilayer loan networks: per-cohort snapshot sets over the financial
//! transaction (FT) and common ownership (CO) layers.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::autodiff::Tensor;
use crate::data::{format_number, LoanRecord, OwnershipRow, TransactionRow};
use crate::month::YearMonth;

/// Look-back window length, and so the number of snapshots per cohort.
pub const TAU: usize = 6;

/// Largest `n * l` accepted by [`supra_adjacency`].
pub const SUPRA_LIMIT: usize = 4096;

/// Company-level relation touching a target company: (target company,
/// neighbor company, layer, payer is the target?, weight).
type Relation<'a> = (&'a str, &'a str, Layer, Option<bool>, f64);

type PaidReceived = (Vec<f64>, Vec<f64>);

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("no loans originate in {0}")]
    EmptyCohort(YearMonth),
    #[error("snapshot index {0} outside 1..=6")]
    SnapshotRange(usize),
    #[error("node {node} out of range ({count} nodes)")]
    NodeRange { node: usize, count: usize },
    #[error("layer {0} not present in snapshot set")]
    MissingLayer(Layer),
    #[error("supra-adjacency would be {size}x{size}, above the limit {limit}")]
    TooLarge { size: usize, limit: usize },
    #[error("layer {0} requested twice")]
    DuplicateLayer(Layer),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Layer {
    Ft,
    Co,
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layer::Ft => "FT",
            Layer::Co => "CO",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerKind {
    pub layer: Layer,
    pub directed: bool,
    pub weighted: bool,
}

impl LayerKind {
    pub fn ft(directed: bool, weighted: bool) -> Self {
        Self {
            layer: Layer::Ft,
            directed,
            weighted,
        }
    }

    /// Ownership is symmetric and unweighted.
    pub fn co() -> Self {
        Self {
            layer: Layer::Co,
            directed: false,
            weighted: false,
        }
    }
}

/// Loan-level edge. For directed FT edges `src` paid `dst`; undirected edges
/// run from the target loan to the neighbor loan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
    pub layer: Layer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub source_month: YearMonth,
    pub edges: Vec<Edge>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    In,
    Out,
    Both,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotSet {
    pub origination_month: YearMonth,
    pub layers: Vec<LayerKind>,
    /// Oldest first; snapshot `s` (1-based) holds neighbor loans from `month - 7 + s`.
    pub snapshots: Vec<Snapshot>,
    /// Loan id per node; targets come first.
    pub node_ids: Vec<String>,
    pub node_index: HashMap<String, usize>,
    /// Row of each node in the loan slice the set was built from.
    pub node_rows: Vec<usize>,
    pub target_mask: Vec<bool>,
    /// Relation rows in the window naming a company without loans.
    pub skipped_relations: usize,
}

impl SnapshotSet {
    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn target_count(&self) -> usize {
        self.target_mask.iter().filter(|&&t| t).count()
    }

    pub fn targets(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.node_count()).filter(|&i| self.target_mask[i])
    }

    pub fn layer(&self, layer: Layer) -> Option<LayerKind> {
        self.layers.iter().copied().find(|k| k.layer == layer)
    }

    pub fn snapshot(&self, index: usize) -> Result<&Snapshot, GraphError> {
        if !(1..=TAU).contains(&index) {
            return Err(GraphError::SnapshotRange(index));
        }
        Ok(&self.snapshots[index - 1])
    }

    pub fn edge_count(&self) -> usize {
        self.snapshots.iter().map(|s| s.edges.len()).sum()
    }
}

/// `ln(1 + mean amount)`; `None` when there is nothing to average or the
/// mean is zero, since a zero-weight edge carries no information.
pub fn ft_edge_weight(amounts: &[f64]) -> Option<f64> {
    if amounts.is_empty() {
        return None;
    }
    let mean = amounts.iter().sum::<f64>() / amounts.len() as f64;
    let w = mean.ln_1p();
    (w > 0.0).then_some(w)
}

/// Relation rows indexed by month, reusable across cohorts.
pub struct GraphBuilder<'a> {
    loans: &'a [LoanRecord],
    /// company -> month -> loan rows
    loans_by_company: HashMap<&'a str, BTreeMap<YearMonth, Vec<usize>>>,
    transactions: BTreeMap<YearMonth, Vec<&'a TransactionRow>>,
    ownerships: BTreeMap<YearMonth, Vec<&'a OwnershipRow>>,
}

impl<'a> GraphBuilder<'a> {
    pub fn new(loans: &'a [LoanRecord], transactions: &'a [TransactionRow], ownerships: &'a [OwnershipRow]) -> Self {
        let mut loans_by_company: HashMap<&str, BTreeMap<YearMonth, Vec<usize>>> = HashMap::new();
        for (i, l) in loans.iter().enumerate() {
            loans_by_company
                .entry(l.company_id.as_str())
                .or_default()
                .entry(l.origination_month)
                .or_default()
                .push(i);
        }
        let mut tx: BTreeMap<YearMonth, Vec<&TransactionRow>> = BTreeMap::new();
        for t in transactions {
            tx.entry(t.month).or_default().push(t);
        }
        let mut own: BTreeMap<YearMonth, Vec<&OwnershipRow>> = BTreeMap::new();
        for o in ownerships {
            own.entry(o.month).or_default().push(o);
        }
        Self {
            loans,
            loans_by_company,
            transactions: tx,
            ownerships: own,
        }
    }

    pub fn months(&self) -> BTreeSet<YearMonth> {
        self.loans.iter().map(|l| l.origination_month).collect()
    }

    pub fn build(&self, month: YearMonth, layers: &[LayerKind]) -> Result<SnapshotSet, GraphError> {
        let mut seen = HashSet::new();
        for k in layers {
            if !seen.insert(k.layer) {
                return Err(GraphError::DuplicateLayer(k.layer));
            }
        }
        let targets: Vec<usize> = (0..self.loans.len())
            .filter(|&i| self.loans[i].origination_month == month)
            .collect();
        if targets.is_empty() {
            return Err(GraphError::EmptyCohort(month));
        }
        let window = month.plus(-(TAU as i64))..month;
        let known = |c: &str| self.loans_by_company.contains_key(c);
        let mut skipped = 0;

        // (payer, payee) -> amounts within the window
        let mut flows: BTreeMap<(&str, &str), Vec<f64>> = BTreeMap::new();
        for rows in self.transactions.range(window.clone()).map(|(_, r)| r) {
            for t in rows {
                if !known(&t.src_company) || !known(&t.dst_company) {
                    skipped += 1;
                } else if t.src_company != t.dst_company {
                    flows
                        .entry((t.src_company.as_str(), t.dst_company.as_str()))
                        .or_default()
                        .push(t.amount);
                }
            }
        }
        let mut owned: BTreeSet<(&str, &str)> = BTreeSet::new();
        for rows in self.ownerships.range(window).map(|(_, r)| r) {
            for o in rows {
                if !known(&o.company_a) || !known(&o.company_b) {
                    skipped += 1;
                } else if o.company_a != o.company_b {
                    let (a, b) = (o.company_a.as_str(), o.company_b.as_str());
                    owned.insert((a.min(b), a.max(b)));
                }
            }
        }

        let target_companies: BTreeSet<&str> = targets.iter().map(|&i| self.loans[i].company_id.as_str()).collect();
        let mut relations: Vec<Relation> = Vec::new();
        for kind in layers {
            match kind.layer {
                Layer::Ft => {
                    // (target, neighbor) -> (amounts paid, amounts received)
                    let mut pairs: BTreeMap<(&str, &str), PaidReceived> = BTreeMap::new();
                    for (&(payer, payee), amounts) in &flows {
                        if target_companies.contains(payer) {
                            pairs.entry((payer, payee)).or_default().0.extend(amounts);
                        }
                        if target_companies.contains(payee) {
                            pairs.entry((payee, payer)).or_default().1.extend(amounts);
                        }
                    }
                    for ((t, n), (paid, received)) in pairs {
                        let weigh = |amounts: &[f64]| {
                            if kind.weighted {
                                ft_edge_weight(amounts)
                            } else {
                                (!amounts.is_empty()).then_some(1.0)
                            }
                        };
                        if kind.directed {
                            if let Some(w) = weigh(&paid) {
                                relations.push((t, n, Layer::Ft, Some(true), w));
                            }
                            if let Some(w) = weigh(&received) {
                                relations.push((t, n, Layer::Ft, Some(false), w));
                            }
                        } else {
                            let all: Vec<f64> = paid.iter().chain(&received).copied().collect();
                            if let Some(w) = weigh(&all) {
                                relations.push((t, n, Layer::Ft, None, w));
                            }
                        }
                    }
                }
                Layer::Co => {
                    for &(a, b) in &owned {
                        if target_companies.contains(a) {
                            relations.push((a, b, Layer::Co, None, 1.0));
                        }
                        if target_companies.contains(b) {
                            relations.push((b, a, Layer::Co, None, 1.0));
                        }
                    }
                }
            }
        }

        let mut node_rows = targets.clone();
        let mut node_of_row: HashMap<usize, usize> = targets.iter().enumerate().map(|(n, &r)| (r, n)).collect();
        let mut target_loans_of: HashMap<&str, Vec<usize>> = HashMap::new();
        for (n, &r) in targets.iter().enumerate() {
            target_loans_of.entry(self.loans[r].company_id.as_str()).or_default().push(n);
        }
        let mut snapshots: Vec<Snapshot> = (1..=TAU)
            .map(|s| Snapshot {
                source_month: month.plus(s as i64 - 7),
                edges: Vec::new(),
            })
            .collect();
        for snap in snapshots.iter_mut() {
            for &(t, n, layer, payer_is_target, w) in &relations {
                let Some(rows) = self.loans_by_company.get(n).and_then(|m| m.get(&snap.source_month)) else {
                    continue;
                };
                for &r in rows {
                    let next = node_rows.len();
                    let nb = *node_of_row.entry(r).or_insert(next);
                    if nb == next {
                        node_rows.push(r);
                    }
                    for &tn in &target_loans_of[t] {
                        let (src, dst) = match payer_is_target {
                            Some(false) => (nb, tn),
                            _ => (tn, nb),
                        };
                        snap.edges.push(Edge {
                            src,
                            dst,
                            weight: w,
                            layer,
                        });
                    }
                }
            }
        }
        let node_ids: Vec<String> = node_rows.iter().map(|&r| self.loans[r].loan_id.clone()).collect();
        let node_index = node_ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let mut target_mask = vec![false; node_rows.len()];
        target_mask[..targets.len()].fill(true);
        Ok(SnapshotSet {
            origination_month: month,
            layers: layers.to_vec(),
            snapshots,
            node_ids,
            node_index,
            node_rows,
            target_mask,
            skipped_relations: skipped,
        })
    }
}

/// Builds the snapshot set of one origination month.
pub fn build_snapshots(
    loans: &[LoanRecord],
    transactions: &[TransactionRow],
    ownerships: &[OwnershipRow],
    origination_month: YearMonth,
    layers: &[LayerKind],
) -> Result<SnapshotSet, GraphError> {
    GraphBuilder::new(loans, transactions, ownerships).build(origination_month, layers)
}

/// Neighbors of `node` in one snapshot and layer, ascending by node index.
pub fn neighbors(
    set: &SnapshotSet,
    snapshot_index: usize,
    layer: Layer,
    node: usize,
    direction: Direction,
) -> Result<Vec<(usize, f64)>, GraphError> {
    let snap = set.snapshot(snapshot_index)?;
    let kind = set.layer(layer).ok_or(GraphError::MissingLayer(layer))?;
    if node >= set.node_count() {
        return Err(GraphError::NodeRange {
            node,
            count: set.node_count(),
        });
    }
    let direction = if kind.directed { direction } else { Direction::Both };
    let mut out: Vec<(usize, f64)> = Vec::new();
    for e in snap.edges.iter().filter(|e| e.layer == layer) {
        if e.dst == node && matches!(direction, Direction::In | Direction::Both) {
            out.push((e.src, e.weight));
        }
        if e.src == node && matches!(direction, Direction::Out | Direction::Both) {
            out.push((e.dst, e.weight));
        }
    }
    out.sort_by_key(|&(n, _)| n);
    Ok(out)
}

/// Dense `(n*l) x (n*l)` supra-adjacency of one snapshot with unit identity
/// coupling between each node's layer replicas.
pub fn supra_adjacency(set: &SnapshotSet, snapshot_index: usize) -> Result<Tensor, GraphError> {
    let snap = set.snapshot(snapshot_index)?;
    let n = set.node_count();
    let l = set.layers.len();
    let size = n * l;
    if size > SUPRA_LIMIT {
        return Err(GraphError::TooLarge {
            size,
            limit: SUPRA_LIMIT,
        });
    }
    let mut a = Tensor::zeros(&[size, size]);
    let data = a.data_mut();
    for (k, kind) in set.layers.iter().enumerate() {
        let off = k * n;
        for e in snap.edges.iter().filter(|e| e.layer == kind.layer) {
            data[(off + e.src) * size + off + e.dst] = e.weight;
            if !kind.directed {
                data[(off + e.dst) * size + off + e.src] = e.weight;
            }
        }
    }
    for k in 0..l {
        for m in 0..l {
            if k != m {
                for i in 0..n {
                    data[(k * n + i) * size + m * n + i] = 1.0;
                }
            }
        }
    }
    Ok(a)
}

/// Tab-separated `snapshot, layer, src_loan, dst_loan, weight`, one edge per line.
pub fn write_snapshot_edges(set: &SnapshotSet, mut out: impl Write) -> Result<(), GraphError> {
    writeln!(out, "snapshot\tlayer\tsrc_loan\tdst_loan\tweight")?;
    for (s, snap) in set.snapshots.iter().enumerate() {
        for e in &snap.edges {
            writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                s + 1,
                e.layer,
                set.node_ids[e.src],
                set.node_ids[e.dst],
                format_number(e.weight)
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CompanySize;

    fn ym(s: &str) -> YearMonth {
        s.parse().unwrap()
    }

    fn loan(id: &str, company: &str, month: &str) -> LoanRecord {
        LoanRecord {
            loan_id: id.into(),
            company_id: company.into(),
            origination_month: ym(month),
            company_size: CompanySize::Small,
            default: false,
        }
    }

    fn tx(src: &str, dst: &str, month: &str, amount: f64) -> TransactionRow {
        TransactionRow {
            src_company: src.into(),
            dst_company: dst.into(),
            month: ym(month),
            amount,
        }
    }

    #[test]
    fn weight_formula() {
        assert!((ft_edge_weight(&[100.0, 300.0]).unwrap() - 201f64.ln()).abs() < 1e-12);
        assert!((ft_edge_weight(&[100.0, 300.0]).unwrap() - 5.3033).abs() < 1e-4);
        assert_eq!(ft_edge_weight(&[0.0]), None);
        assert_eq!(ft_edge_weight(&[]), None);
    }

    #[test]
    fn neighbor_loan_lands_in_its_origination_snapshot() {
        let loans = vec![loan("T", "A", "2019-07"), loan("N", "B", "2019-01")];
        let txs = vec![tx("A", "B", "2019-03", 10.0)];
        let set = build_snapshots(&loans, &txs, &[], ym("2019-07"), &[LayerKind::ft(false, false)]).unwrap();
        assert_eq!(set.snapshots[0].source_month, ym("2019-01"));
        assert_eq!(set.snapshots[0].edges.len(), 1);
        assert_eq!(set.edge_count(), 1);
    }

    #[test]
    fn relation_outside_window_ignored() {
        let loans = vec![loan("T", "A", "2019-07"), loan("N", "B", "2019-01")];
        let txs = vec![tx("A", "B", "2018-12", 10.0), tx("A", "B", "2019-07", 10.0)];
        let set = build_snapshots(&loans, &txs, &[], ym("2019-07"), &[LayerKind::ft(false, false)]).unwrap();
        assert_eq!(set.edge_count(), 0);
        assert_eq!(set.target_count(), 1);
        assert_eq!(set.snapshots.len(), TAU);
    }

    #[test]
    fn empty_cohort_rejected() {
        let loans = vec![loan("N", "B", "2019-01")];
        assert!(matches!(
            build_snapshots(&loans, &[], &[], ym("2019-07"), &[LayerKind::co()]),
            Err(GraphError::EmptyCohort(_))
        ));
    }

    #[test]
    fn unknown_companies_counted() {
        let loans = vec![loan("T", "A", "2019-07")];
        let txs = vec![tx("A", "Z", "2019-03", 10.0)];
        let own = vec![OwnershipRow {
            company_a: "Y".into(),
            company_b: "A".into(),
            month: ym("2019-04"),
        }];
        let set = build_snapshots(&loans, &txs, &own, ym("2019-07"), &[LayerKind::ft(true, true), LayerKind::co()])
            .unwrap();
        assert_eq!(set.skipped_relations, 2);
    }

    #[test]
    fn direction_follows_payment() {
        let loans = vec![loan("T", "A", "2019-07"), loan("N", "B", "2019-02")];
        let txs = vec![tx("B", "A", "2019-03", 100.0), tx("B", "A", "2019-04", 300.0)];
        let set = build_snapshots(&loans, &txs, &[], ym("2019-07"), &[LayerKind::ft(true, true)]).unwrap();
        let e = set.snapshots[1].edges[0];
        assert_eq!((set.node_ids[e.src].as_str(), set.node_ids[e.dst].as_str()), ("N", "T"));
        assert!((e.weight - 201f64.ln()).abs() < 1e-12);
        assert_eq!(neighbors(&set, 2, Layer::Ft, 0, Direction::In).unwrap(), vec![(1, e.weight)]);
        assert!(neighbors(&set, 2, Layer::Ft, 0, Direction::Out).unwrap().is_empty());
        assert!(matches!(
            neighbors(&set, 7, Layer::Ft, 0, Direction::In),
            Err(GraphError::SnapshotRange(7))
        ));
    }

    #[test]
    fn undirected_neighbors_ignore_direction() {
        let loans = vec![loan("T", "A", "2019-07"), loan("N", "B", "2019-02")];
        let own = vec![OwnershipRow {
            company_a: "B".into(),
            company_b: "A".into(),
            month: ym("2019-05"),
        }];
        let set = build_snapshots(&loans, &[], &own, ym("2019-07"), &[LayerKind::co()]).unwrap();
        for d in [Direction::In, Direction::Out] {
            assert_eq!(neighbors(&set, 2, Layer::Co, 0, d).unwrap(), vec![(1, 1.0)]);
            assert_eq!(neighbors(&set, 2, Layer::Co, 1, d).unwrap(), vec![(0, 1.0)]);
        }
    }

    #[test]
    fn one_node_two_layers_identity_coupling() {
        let loans = vec![loan("T", "A", "2019-07")];
        let set = build_snapshots(&loans, &[], &[], ym("2019-07"), &[LayerKind::ft(false, false), LayerKind::co()])
            .unwrap();
        let a = supra_adjacency(&set, 1).unwrap();
        assert_eq!(a.data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn directed_weighted_supra_entry() {
        let loans = vec![loan("T", "A", "2019-07"), loan("N", "B", "2019-06")];
        let txs = vec![tx("A", "B", "2019-06", 50.0)];
        let set = build_snapshots(&loans, &txs, &[], ym("2019-07"), &[LayerKind::ft(true, true)]).unwrap();
        let a = supra_adjacency(&set, 6).unwrap();
        assert_eq!(a.get2(0, 1), 51f64.ln());
        assert_eq!(a.get2(1, 0), 0.0);
    }

    #[test]
    fn export_is_tab_separated() {
        let loans = vec![loan("T", "A", "2019-07"), loan("N", "B", "2019-06")];
        let txs = vec![tx("A", "B", "2019-06", 50.0)];
        let set = build_snapshots(&loans, &txs, &[], ym("2019-07"), &[LayerKind::ft(true, false)]).unwrap();
        let mut buf = Vec::new();
        write_snapshot_edges(&set, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1), Some("6\tFT\tT\tN\t1"));
    }
}
