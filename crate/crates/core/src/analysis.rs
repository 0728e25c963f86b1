//! Critical paths, hazard statistics and DOT export of task DAGs.
//!
//! Path lengths count kernel tasks. Copy tasks still order execution but
//! weigh nothing, so out-of-place variants are measured on the same scale
//! as in-place ones.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::io::Write;

use crate::error::Result;
use crate::scheduler::{build_dag, HazardKind, TaskDag};
use crate::taskgen::{
    gen_inversion, gen_step1, gen_step2, gen_step3, LoopDir, LoopOrder, Placement, Step,
    TaskStream, VariantConfig,
};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathReport {
    pub variant: String,
    pub tiles_per_dim: usize,
    /// Longest chain, counted in kernel tasks.
    pub critical_path: usize,
    /// Same chain metric with copies weighted like kernels.
    pub critical_path_with_copies: usize,
    pub node_count: usize,
    pub copy_count: usize,
    pub edge_counts: BTreeMap<HazardKind, usize>,
    /// Kernel task ids along one longest chain.
    pub witness: Vec<usize>,
}

impl fmt::Display for PathReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variant:        {}", self.variant)?;
        writeln!(f, "tiles per dim:  {}", self.tiles_per_dim)?;
        writeln!(f, "kernel tasks:   {}", self.node_count)?;
        writeln!(f, "copy tasks:     {}", self.copy_count)?;
        writeln!(f, "critical path:  {}", self.critical_path)?;
        writeln!(f, "  with copies:  {}", self.critical_path_with_copies)?;
        for kind in HazardKind::ALL {
            writeln!(f, "{kind} edges:      {}", self.edge_counts.get(&kind).unwrap_or(&0))?;
        }
        Ok(())
    }
}

// Longest path ending at each node, with the predecessor achieving it.
fn longest_paths(dag: &TaskDag, weight: impl Fn(usize) -> usize) -> (Vec<usize>, Vec<Option<usize>>) {
    let n = dag.len();
    let mut len = vec![0; n];
    let mut via = vec![None; n];
    // ids are a topological order
    for v in 0..n {
        let mut best: Option<(usize, usize)> = None;
        for &u in dag.preds(v) {
            if best.is_none_or(|(b, _)| len[u] > b) {
                best = Some((len[u], u));
            }
        }
        len[v] = best.map_or(0, |(b, _)| b) + weight(v);
        via[v] = best.map(|(_, u)| u);
    }
    (len, via)
}

/// Longest chain of the DAG, measured in kernel tasks.
pub fn critical_path(dag: &TaskDag) -> PathReport {
    let is_copy = |v: usize| dag.tasks()[v].is_copy();
    let (len, via) = longest_paths(dag, |v| usize::from(!is_copy(v)));
    let (len_all, _) = longest_paths(dag, |_| 1);

    let mut witness = Vec::new();
    if let Some(end) = (0..dag.len()).max_by_key(|&v| (len[v], std::cmp::Reverse(v))) {
        let mut cur = Some(end);
        while let Some(v) = cur {
            if !is_copy(v) {
                witness.push(v);
            }
            cur = via[v];
        }
        witness.reverse();
    }

    let mut edge_counts = BTreeMap::new();
    for e in dag.hazard_edges() {
        *edge_counts.entry(e.kind).or_insert(0) += 1;
    }
    let copy_count = (0..dag.len()).filter(|&v| is_copy(v)).count();
    PathReport {
        variant: String::new(),
        tiles_per_dim: dag.tiles_per_dim(),
        critical_path: len.iter().copied().max().unwrap_or(0),
        critical_path_with_copies: len_all.iter().copied().max().unwrap_or(0),
        node_count: dag.len() - copy_count,
        copy_count,
        edge_counts,
        witness,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeScope {
    /// both endpoints are kernels of the same step
    IntraStep,
    /// kernels of different steps
    CrossStep,
    /// at least one endpoint is a copy
    Copy,
}

/// Hazard edge counts, recorded before any pruning.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct HazardCensus {
    pub counts: BTreeMap<(EdgeScope, HazardKind), usize>,
}

impl HazardCensus {
    pub fn get(&self, scope: EdgeScope, kind: HazardKind) -> usize {
        self.counts.get(&(scope, kind)).copied().unwrap_or(0)
    }

    /// Edges of `kind` between two kernel tasks.
    pub fn kernel(&self, kind: HazardKind) -> usize {
        self.get(EdgeScope::IntraStep, kind) + self.get(EdgeScope::CrossStep, kind)
    }

    pub fn total(&self, kind: HazardKind) -> usize {
        self.kernel(kind) + self.get(EdgeScope::Copy, kind)
    }
}

pub fn hazard_census(dag: &TaskDag) -> HazardCensus {
    let mut census = HazardCensus::default();
    for e in dag.hazard_edges() {
        let (u, v) = (&dag.tasks()[e.from], &dag.tasks()[e.to]);
        let scope = if u.is_copy() || v.is_copy() {
            EdgeScope::Copy
        } else if u.step == v.step {
            EdgeScope::IntraStep
        } else {
            EdgeScope::CrossStep
        };
        *census.counts.entry((scope, e.kind)).or_insert(0) += 1;
    }
    census
}

/// Which part of the inversion a measurement covers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Scope {
    Step(u8),
    Full { pipelined: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Variant {
    pub scope: Scope,
    pub placement: Placement,
    pub loops: LoopOrder,
}

impl Variant {
    pub fn step(step: u8, placement: Placement, loops: LoopOrder) -> Self {
        Self {
            scope: Scope::Step(step),
            placement,
            loops,
        }
    }

    pub fn full(pipelined: bool, placement: Placement, loops: LoopOrder) -> Self {
        Self {
            scope: Scope::Full { pipelined },
            placement,
            loops,
        }
    }

    pub fn stream(&self, t: usize) -> Result<TaskStream> {
        match self.scope {
            Scope::Step(1) => gen_step1(t, self.loops.step(1)),
            Scope::Step(2) => gen_step2(t, self.loops.step(2), self.placement),
            Scope::Step(3) => gen_step3(t, self.loops.step(3), self.placement),
            Scope::Step(s) => Err(crate::error::Error::InvalidSize(format!("no step {s}"))),
            Scope::Full { pipelined } => gen_inversion(
                t,
                &VariantConfig {
                    placement: self.placement,
                    loops: self.loops,
                    pipelined,
                    workers: 1,
                },
            ),
        }
    }

    pub fn measure(&self, t: usize) -> Result<PathReport> {
        let dag = build_dag(&self.stream(t)?);
        let mut report = critical_path(&dag);
        report.variant = self.to_string();
        Ok(report)
    }

    /// Closed-form critical path for the variants with a known formula.
    pub fn formula(&self) -> Option<Formula> {
        let [d1, d2, d3] = self.loops.0;
        let inp = self.placement == Placement::InPlace;
        use LoopDir::{Down, Up};
        let f = match (self.scope, inp) {
            (Scope::Step(1), _) if d1 == Up => Formula::new("3t-2", |t| 3 * t - 2),
            (Scope::Step(2), true) if d2 == Down => Formula::new("3t-3", |t| 3 * t - 3),
            (Scope::Step(2), true) => Formula::new("t^2-2t+3", |t| t * t - 2 * t + 3),
            (Scope::Step(2), false) if d2 == Down => Formula::new("2t-1", |t| 2 * t - 1),
            (Scope::Step(2), false) => Formula::new("t^2/2-t/2+2", |t| (t * t - t) / 2 + 2),
            (Scope::Step(3), true) if d3 == Up => Formula::new("3t-2", |t| 3 * t - 2),
            (Scope::Step(3), false) => Formula::new("t", |t| t),
            (Scope::Full { .. }, _) if self.loops != LoopOrder::UDU => return None,
            (Scope::Full { pipelined: true }, true) => Formula::new("9t-9", |t| 9 * t - 9),
            (Scope::Full { pipelined: false }, true) => Formula::new("9t-7", |t| 9 * t - 7),
            (Scope::Full { pipelined: true }, false) => Formula::new("5t-2", |t| 5 * t - 2),
            (Scope::Full { pipelined: false }, false) => Formula::new("6t-3", |t| 6 * t - 3),
            _ => return None,
        };
        Some(f)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.scope {
            Scope::Step(s) => write!(f, "step{s}-{}-{}", self.placement, self.loops),
            Scope::Full { pipelined } => write!(
                f,
                "full-{}-{}-{}",
                self.placement,
                self.loops,
                if pipelined { "pipelined" } else { "barriered" }
            ),
        }
    }
}

#[derive(Clone, Copy)]
pub struct Formula {
    pub expr: &'static str,
    eval: fn(i64) -> i64,
}

impl Formula {
    fn new(expr: &'static str, eval: fn(i64) -> i64) -> Self {
        Self { expr, eval }
    }

    pub fn eval(&self, t: usize) -> i64 {
        (self.eval)(t as i64)
    }
}

impl fmt::Debug for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.expr)
    }
}

/// The six step-by-placement entries under UDU, the UUU step-2 entries
/// and the four whole-inversion totals.
pub fn standard_variants() -> Vec<Variant> {
    let mut out = Vec::new();
    for placement in [Placement::InPlace, Placement::OutOfPlace] {
        for step in 1..=3 {
            out.push(Variant::step(step, placement, LoopOrder::UDU));
        }
        out.push(Variant::step(2, placement, LoopOrder::UUU));
        for pipelined in [true, false] {
            out.push(Variant::full(pipelined, placement, LoopOrder::UDU));
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FormulaRow {
    pub variant: String,
    pub tiles_per_dim: usize,
    pub measured: usize,
    pub formula: Option<(String, i64)>,
    /// `None` when not checked (no formula, or `t < 2`).
    pub matched: Option<bool>,
}

impl FormulaRow {
    pub fn is_mismatch(&self) -> bool {
        self.matched == Some(false)
    }
}

/// Measures every variant for every `t` and compares against the closed
/// forms. Formulas are only asserted from `t = 2` on.
pub fn formula_table(
    t_range: impl IntoIterator<Item = usize> + Clone,
    variants: &[Variant],
) -> Result<Vec<FormulaRow>> {
    let mut rows = Vec::new();
    for v in variants {
        for t in t_range.clone() {
            let measured = v.measure(t)?.critical_path;
            let formula = v.formula().map(|f| (f.expr.to_string(), f.eval(t)));
            let matched = match &formula {
                Some((_, expected)) if t >= 2 => Some(*expected == measured as i64),
                _ => None,
            };
            rows.push(FormulaRow {
                variant: v.to_string(),
                tiles_per_dim: t,
                measured,
                formula,
                matched,
            });
        }
    }
    Ok(rows)
}

pub fn write_formula_csv<W: Write>(rows: &[FormulaRow], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["variant", "t", "measured", "formula", "match"])?;
    for r in rows {
        let formula = r
            .formula
            .as_ref()
            .map(|(expr, v)| format!("{expr}={v}"))
            .unwrap_or_default();
        let matched = match r.matched {
            Some(true) => "yes",
            Some(false) => "no",
            None => "unchecked",
        };
        wtr.write_record([
            r.variant.clone(),
            r.tiles_per_dim.to_string(),
            r.measured.to_string(),
            formula,
            matched.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Per-step critical path for every loop-order triple.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SweepRow {
    pub loops: LoopOrder,
    pub step: u8,
    pub placement: Placement,
    pub measured: usize,
}

pub fn sweep_loop_orders(t: usize) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for loops in LoopOrder::all() {
        for placement in [Placement::InPlace, Placement::OutOfPlace] {
            for step in 1..=3 {
                let measured = Variant::step(step, placement, loops).measure(t)?.critical_path;
                rows.push(SweepRow {
                    loops,
                    step,
                    placement,
                    measured,
                });
            }
        }
    }
    Ok(rows)
}

/// Minimum per (step, placement) over a sweep.
pub fn sweep_minima(rows: &[SweepRow]) -> BTreeMap<(u8, bool), usize> {
    let mut min = BTreeMap::new();
    for r in rows {
        let key = (r.step, r.placement == Placement::InPlace);
        let e = min.entry(key).or_insert(usize::MAX);
        *e = (*e).min(r.measured);
    }
    min
}

/// Number of weakly connected components among kernel tasks, ignoring
/// copies and barrier edges.
pub fn kernel_components(dag: &TaskDag) -> usize {
    let n = dag.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn root(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for e in dag.hazard_edges() {
        if dag.tasks()[e.from].is_copy() || dag.tasks()[e.to].is_copy() {
            continue;
        }
        let (a, b) = (root(&mut parent, e.from), root(&mut parent, e.to));
        parent[a] = b;
    }
    let mut roots: Vec<usize> = (0..n)
        .filter(|&v| !dag.tasks()[v].is_copy())
        .map(|v| root(&mut parent, v))
        .collect();
    roots.sort_unstable();
    roots.dedup();
    roots.len()
}

#[derive(Clone, Debug)]
pub struct DotOptions {
    pub name: String,
    pub include_copies: bool,
    pub barrier_edges: bool,
}

impl Default for DotOptions {
    fn default() -> Self {
        Self {
            name: "dag".into(),
            include_copies: false,
            barrier_edges: false,
        }
    }
}

fn step_color(step: Step) -> &'static str {
    match step {
        Step::Factorize => "lightblue",
        Step::Invert => "palegreen",
        Step::Product => "khaki",
        Step::Copy => "lightgray",
    }
}

/// Graphviz rendering. Nodes are labeled `KIND(i,j[,k])`; RAW edges are
/// solid, WAR dashed red, WAW dotted blue.
pub fn export_dot(dag: &TaskDag, opts: &DotOptions) -> String {
    let keep = |v: usize| opts.include_copies || !dag.tasks()[v].is_copy();
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", opts.name);
    let _ = writeln!(out, "  node [shape=ellipse, style=filled];");
    for task in dag.tasks().iter().filter(|t| keep(t.id)) {
        let _ = writeln!(
            out,
            "  t{} [label=\"{}\", fillcolor={}];",
            task.id,
            task.label(),
            step_color(task.step)
        );
    }
    let mut edges: Vec<_> = dag
        .hazard_edges()
        .iter()
        .filter(|e| keep(e.from) && keep(e.to))
        .map(|e| (e.from, e.to, e.kind))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    for (u, v, kind) in edges {
        let style = match kind {
            HazardKind::Raw => "style=solid",
            HazardKind::War => "style=dashed, color=red",
            HazardKind::Waw => "style=dotted, color=blue",
        };
        let _ = writeln!(out, "  t{u} -> t{v} [{style}, tooltip=\"{kind}\"];");
    }
    if opts.barrier_edges {
        for &(u, v) in dag.barrier_edges() {
            if keep(u) && keep(v) {
                let _ = writeln!(out, "  t{u} -> t{v} [style=dotted, color=gray];");
            }
        }
    }
    out.push_str("}\n");
    out
}
