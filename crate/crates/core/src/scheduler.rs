//! Hazard-driven DAG construction and a multi-worker executor.
//!
//! A [`TaskDag`] is unfolded from a sequential [`TaskStream`] with a
//! per-tile scoreboard (last writer plus readers since that write). The
//! executor runs any task whose predecessors have completed, lowest stream
//! id first, on a fixed pool of scoped worker threads.

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap, HashMap};
use std::fmt;
use std::io::Write;
use std::sync::{Condvar, Mutex, RwLock};
use std::thread;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::kernels::{self, KernelKind, Sign, Trans};
use crate::taskgen::{AccessMode, Step, Task, TaskKind, TaskStream};
use crate::tile_matrix::{MatrixLabel, Tile, TileId, TileMatrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HazardKind {
    /// read after write (true dependence)
    Raw,
    /// write after read (anti-dependence)
    War,
    /// write after write (output dependence). Generated streams only
    /// write through read-write accesses, so such pairs classify as `Raw`.
    Waw,
}

impl HazardKind {
    pub const ALL: [HazardKind; 3] = [HazardKind::Raw, HazardKind::War, HazardKind::Waw];

    /// Kind of the edge from an earlier access `first` to a later access
    /// `second` of the same tile, if they conflict. A read-write on either
    /// side reads and writes; a true dependence takes precedence.
    pub fn classify(first: AccessMode, second: AccessMode) -> Option<HazardKind> {
        let first_writes = first == AccessMode::ReadWrite;
        let second_writes = second == AccessMode::ReadWrite;
        if first_writes {
            Some(HazardKind::Raw)
        } else if second_writes {
            Some(HazardKind::War)
        } else {
            None
        }
    }
}

impl fmt::Display for HazardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HazardKind::Raw => "RAW",
            HazardKind::War => "WAR",
            HazardKind::Waw => "WAW",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct HazardEdge {
    pub from: usize,
    pub to: usize,
    pub kind: HazardKind,
    pub tile: TileId,
}

/// Tasks plus ordering constraints. Task ids are stream positions, and
/// every edge points from a smaller to a larger id.
#[derive(Clone, Debug)]
pub struct TaskDag {
    tiles_per_dim: usize,
    tasks: Vec<Task>,
    hazard_edges: Vec<HazardEdge>,
    barrier_edges: Vec<(usize, usize)>,
    preds: Vec<Vec<usize>>,
    succs: Vec<Vec<usize>>,
}

impl TaskDag {
    fn assemble(
        tiles_per_dim: usize,
        tasks: Vec<Task>,
        hazard_edges: Vec<HazardEdge>,
        barrier_edges: Vec<(usize, usize)>,
    ) -> Self {
        let n = tasks.len();
        let mut preds = vec![Vec::new(); n];
        let pairs = hazard_edges.iter().map(|e| (e.from, e.to));
        for (u, v) in pairs.chain(barrier_edges.iter().copied()) {
            preds[v].push(u);
        }
        let mut succs = vec![Vec::new(); n];
        for (v, p) in preds.iter_mut().enumerate() {
            p.sort_unstable();
            p.dedup();
            for &u in p.iter() {
                succs[u].push(v);
            }
        }
        Self {
            tiles_per_dim,
            tasks,
            hazard_edges,
            barrier_edges,
            preds,
            succs,
        }
    }

    pub fn tiles_per_dim(&self) -> usize {
        self.tiles_per_dim
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn hazard_edges(&self) -> &[HazardEdge] {
        &self.hazard_edges
    }

    pub fn barrier_edges(&self) -> &[(usize, usize)] {
        &self.barrier_edges
    }

    /// Distinct predecessors of `id`, ascending.
    pub fn preds(&self, id: usize) -> &[usize] {
        &self.preds[id]
    }

    pub fn succs(&self, id: usize) -> &[usize] {
        &self.succs[id]
    }

    pub fn edge_count(&self) -> usize {
        self.preds.iter().map(Vec::len).sum()
    }

    pub fn find(&self, label: &str) -> Option<&Task> {
        self.tasks.iter().find(|t| t.label() == label)
    }

    /// Hazard edge between two tasks, if any.
    pub fn hazard_between(&self, from: usize, to: usize) -> Option<&HazardEdge> {
        self.hazard_edges.iter().find(|e| e.from == from && e.to == to)
    }

    /// Forward reachability from `from` (including itself).
    pub fn reachable_from(&self, from: usize) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut stack = vec![from];
        seen[from] = true;
        while let Some(u) = stack.pop() {
            for &v in &self.succs[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen
    }

    /// Copy of the DAG with transitively implied edges removed.
    pub fn pruned(&self) -> TaskDag {
        let n = self.len();
        // reach[u] holds every node reachable from u through at least one edge
        let words = n.div_ceil(64);
        let mut reach = vec![vec![0u64; words]; n];
        for u in (0..n).rev() {
            let mut row = vec![0u64; words];
            for &v in &self.succs[u] {
                row[v / 64] |= 1 << (v % 64);
                for (w, r) in row.iter_mut().zip(&reach[v]) {
                    *w |= r;
                }
            }
            reach[u] = row;
        }
        let implied = |u: usize, v: usize| {
            self.succs[u]
                .iter()
                .any(|&w| w != v && reach[w][v / 64] & (1 << (v % 64)) != 0)
        };
        let hazard_edges = self
            .hazard_edges
            .iter()
            .copied()
            .filter(|e| !implied(e.from, e.to))
            .collect();
        let barrier_edges = self
            .barrier_edges
            .iter()
            .copied()
            .filter(|&(u, v)| !implied(u, v))
            .collect();
        TaskDag::assemble(self.tiles_per_dim, self.tasks.clone(), hazard_edges, barrier_edges)
    }
}

/// Unfolds a stream into its dependency DAG.
pub fn build_dag(stream: &TaskStream) -> TaskDag {
    #[derive(Default)]
    struct Scoreboard {
        last_writer: Option<usize>,
        readers: Vec<usize>,
    }

    let mut boards: HashMap<TileId, Scoreboard> = HashMap::new();
    let mut hazard_edges = Vec::new();
    for task in stream.tasks() {
        let v = task.id;
        for access in &task.accesses {
            let board = boards.entry(access.tile).or_default();
            if let Some(u) = board.last_writer {
                let kind = HazardKind::classify(AccessMode::ReadWrite, access.mode)
                    .expect("a prior write always conflicts");
                hazard_edges.push(HazardEdge {
                    from: u,
                    to: v,
                    kind,
                    tile: access.tile,
                });
            }
            match access.mode {
                AccessMode::Read => board.readers.push(v),
                AccessMode::ReadWrite => {
                    for &r in &board.readers {
                        hazard_edges.push(HazardEdge {
                            from: r,
                            to: v,
                            kind: HazardKind::War,
                            tile: access.tile,
                        });
                    }
                    board.readers.clear();
                    board.last_writer = Some(v);
                }
            }
        }
    }

    let mut barrier_edges = Vec::new();
    let n = stream.len();
    let mut bounds: Vec<usize> = stream.barriers().to_vec();
    bounds.sort_unstable();
    bounds.dedup();
    let mut seg_starts = vec![0];
    seg_starts.extend(bounds.iter().copied().filter(|&b| b > 0 && b < n));
    seg_starts.push(n);
    for w in seg_starts.windows(3) {
        for u in w[0]..w[1] {
            for v in w[1]..w[2] {
                barrier_edges.push((u, v));
            }
        }
    }

    TaskDag::assemble(
        stream.tiles_per_dim(),
        stream.tasks().to_vec(),
        hazard_edges,
        barrier_edges,
    )
}

/// Tasks not yet completed whose predecessors all are.
pub fn ready_set(dag: &TaskDag, completed: &BTreeSet<usize>) -> BTreeSet<usize> {
    (0..dag.len())
        .filter(|id| !completed.contains(id))
        .filter(|&id| dag.preds(id).iter().all(|p| completed.contains(p)))
        .collect()
}

/// Tiles of `A` and of any working array a stream touches.
struct TileStore {
    tiles_per_dim: usize,
    tile_order: usize,
    slots: HashMap<TileId, RwLock<Tile>>,
}

impl TileStore {
    fn new(stream: &TaskStream, a: TileMatrix) -> Result<Self> {
        let t = a.tiles_per_dim();
        if stream.tiles_per_dim() != t {
            return Err(Error::InvalidSize(format!(
                "stream is for {} tiles per dimension, matrix has {t}",
                stream.tiles_per_dim()
            )));
        }
        let b = a.tile_order();
        let mut slots = HashMap::new();
        for (pos, tile) in a.into_tiles().into_iter().enumerate() {
            slots.insert(TileId::a(pos / t, pos % t), RwLock::new(tile));
        }
        for task in stream.tasks() {
            for access in &task.accesses {
                slots
                    .entry(access.tile)
                    .or_insert_with(|| RwLock::new(Tile::zeros(b)));
            }
        }
        Ok(Self {
            tiles_per_dim: t,
            tile_order: b,
            slots,
        })
    }

    fn into_matrix(mut self) -> TileMatrix {
        let t = self.tiles_per_dim;
        let tiles = (0..t * t)
            .map(|pos| {
                self.slots
                    .remove(&TileId::a(pos / t, pos % t))
                    .expect("operand tile present")
                    .into_inner()
                    .expect("no task panicked")
            })
            .collect();
        TileMatrix::from_tiles(MatrixLabel::A, self.tile_order, t, tiles)
    }

    fn run(&self, task: &Task) -> Result<()> {
        let inputs: Vec<_> = task
            .inputs()
            .map(|id| self.slots[&id].read().expect("tile lock poisoned"))
            .collect();
        let out_id = task.output();
        let mut out = self.slots[&out_id].write().expect("tile lock poisoned");
        let out = &mut *out;
        let kind = match task.kind {
            TaskKind::Copy => {
                out.clone_from(&inputs[0]);
                return Ok(());
            }
            TaskKind::Kernel(kind) => kind,
        };
        let res = match kind {
            KernelKind::Potrf => kernels::potrf(out),
            KernelKind::Trsm => kernels::trsm_right_lt(out, &inputs[0]),
            KernelKind::SyrkSub => {
                kernels::syrk_sub(out, &inputs[0]);
                Ok(())
            }
            KernelKind::SyrkAddT => {
                kernels::syrk_add_t(out, &inputs[0]);
                Ok(())
            }
            KernelKind::Gemm => {
                let (ta, tb, sign) = match task.step {
                    Step::Factorize => (Trans::No, Trans::Yes, Sign::Minus),
                    Step::Invert => (Trans::No, Trans::No, Sign::Plus),
                    _ => (Trans::Yes, Trans::No, Sign::Plus),
                };
                kernels::gemm(out, &inputs[0], &inputs[1], ta, tb, sign)
            }
            KernelKind::Trtri => kernels::trtri(out),
            KernelKind::TrmmLeft => {
                kernels::trmm_left(out, &inputs[0]);
                Ok(())
            }
            KernelKind::TrmmRightNeg => {
                kernels::trmm_right_neg(out, &inputs[0]);
                Ok(())
            }
            KernelKind::TrmmLeftT => {
                kernels::trmm_left_t(out, &inputs[0]);
                Ok(())
            }
            KernelKind::Lauum => {
                kernels::lauum(out);
                Ok(())
            }
        };
        res.map_err(|source| Error::Task {
            task: task.id,
            label: task.label(),
            tile: out_id,
            source: Box::new(source),
        })
    }
}

/// One executed task, timestamps relative to the start of the run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub task: usize,
    pub label: String,
    pub worker: usize,
    pub start_ns: u128,
    pub end_ns: u128,
}

pub fn write_trace_csv<W: Write>(events: &[TraceEvent], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["task", "kind", "indices", "worker", "start_ns", "end_ns"])?;
    for e in events {
        let (kind, indices) = e
            .label
            .split_once('(')
            .map(|(k, rest)| (k, rest.trim_end_matches(')')))
            .unwrap_or((e.label.as_str(), ""));
        wtr.write_record([
            e.task.to_string(),
            kind.to_string(),
            indices.to_string(),
            e.worker.to_string(),
            e.start_ns.to_string(),
            e.end_ns.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug)]
pub struct ExecOptions {
    pub workers: usize,
    pub trace: bool,
}

#[derive(Debug)]
pub struct Execution {
    pub matrix: TileMatrix,
    pub trace: Option<Vec<TraceEvent>>,
}

/// Runs the stream on `workers` threads and returns the updated operand.
pub fn execute(stream: &TaskStream, a: TileMatrix, workers: usize) -> Result<TileMatrix> {
    execute_with(stream, a, ExecOptions { workers, trace: false }).map(|e| e.matrix)
}

struct SchedState {
    ready: BinaryHeap<Reverse<usize>>,
    missing: Vec<usize>,
    running: usize,
    // tasks at or after the earliest failed id are never started
    cutoff: usize,
    errors: Vec<Error>,
    trace: Vec<TraceEvent>,
}

impl SchedState {
    fn next_eligible(&mut self) -> Option<usize> {
        match self.ready.peek() {
            Some(&Reverse(id)) if id < self.cutoff => {
                self.ready.pop();
                Some(id)
            }
            _ => None,
        }
    }
}

pub fn execute_with(stream: &TaskStream, a: TileMatrix, opts: ExecOptions) -> Result<Execution> {
    if opts.workers == 0 {
        return Err(Error::InvalidSize("worker count must be at least 1".into()));
    }
    let store = TileStore::new(stream, a)?;
    let dag = build_dag(stream);
    let missing: Vec<usize> = (0..dag.len()).map(|v| dag.preds(v).len()).collect();
    let ready = missing
        .iter()
        .enumerate()
        .filter(|(_, &m)| m == 0)
        .map(|(v, _)| Reverse(v))
        .collect();
    let state = Mutex::new(SchedState {
        ready,
        missing,
        running: 0,
        cutoff: usize::MAX,
        errors: Vec::new(),
        trace: Vec::new(),
    });
    let wake = Condvar::new();
    let start = Instant::now();

    thread::scope(|scope| {
        for worker in 0..opts.workers {
            let (state, wake, store, dag) = (&state, &wake, &store, &dag);
            scope.spawn(move || loop {
                let id = {
                    let mut st = state.lock().expect("scheduler state poisoned");
                    loop {
                        if let Some(id) = st.next_eligible() {
                            st.running += 1;
                            break Some(id);
                        }
                        if st.running == 0 {
                            break None;
                        }
                        st = wake.wait(st).expect("scheduler state poisoned");
                    }
                };
                let Some(id) = id else {
                    wake.notify_all();
                    return;
                };
                let task = &dag.tasks()[id];
                let t0 = start.elapsed().as_nanos();
                let res = store.run(task);
                let t1 = start.elapsed().as_nanos();

                let mut st = state.lock().expect("scheduler state poisoned");
                st.running -= 1;
                match res {
                    Ok(()) => {
                        for &s in dag.succs(id) {
                            st.missing[s] -= 1;
                            if st.missing[s] == 0 {
                                st.ready.push(Reverse(s));
                            }
                        }
                        if opts.trace {
                            st.trace.push(TraceEvent {
                                task: id,
                                label: task.label(),
                                worker,
                                start_ns: t0,
                                end_ns: t1,
                            });
                        }
                    }
                    Err(e) => {
                        st.cutoff = st.cutoff.min(id);
                        st.errors.push(e);
                    }
                }
                drop(st);
                wake.notify_all();
            });
        }
    });

    let st = state.into_inner().expect("scheduler state poisoned");
    if let Some(first) = st.errors.into_iter().min_by_key(|e| match e {
        Error::Task { task, .. } => *task,
        _ => usize::MAX,
    }) {
        return Err(first);
    }
    let mut trace = st.trace;
    trace.sort_by_key(|e| (e.start_ns, e.task));
    Ok(Execution {
        matrix: store.into_matrix(),
        trace: opts.trace.then_some(trace),
    })
}

/// Plain in-order execution on the calling thread.
pub fn execute_sequential(stream: &TaskStream, a: TileMatrix) -> Result<TileMatrix> {
    let order: Vec<usize> = (0..stream.len()).collect();
    execute_in_order(stream, a, &order)
}

/// Executes tasks in the given order, which must be a topological order
/// of the stream's DAG.
pub fn execute_in_order(stream: &TaskStream, a: TileMatrix, order: &[usize]) -> Result<TileMatrix> {
    let dag = build_dag(stream);
    let mut done = vec![false; dag.len()];
    if order.len() != dag.len() {
        return Err(Error::InvalidSize(format!(
            "order has {} entries for {} tasks",
            order.len(),
            dag.len()
        )));
    }
    for &id in order {
        if id >= dag.len() || done[id] || dag.preds(id).iter().any(|&p| !done[p]) {
            return Err(Error::Contract(format!("order is not topological at task {id}")));
        }
        done[id] = true;
    }
    let store = TileStore::new(stream, a)?;
    for &id in order {
        store.run(&stream.tasks()[id])?;
    }
    Ok(store.into_matrix())
}
