//! Sequential task streams for the three inversion steps.
//!
//! Each generated [`Task`] names one kernel invocation together with the
//! tiles it reads and the single tile it updates. The stream order is the
//! sequential semantics of the algorithm; the scheduler derives all
//! parallelism from it.
//!
//! Out-of-place streams rename operands into two working arrays: `B` holds
//! the Cholesky factor for the column operand of the step-2 updates, `C`
//! holds the inverted factor for every non-output operand of step 3. The
//! diagonal tiles of `C` are snapshotted right after their `TRTRI`, so the
//! step-2 right multiplications read `C_jj` and never block the step-3
//! `LAUUM` that overwrites `A_jj`.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernels::KernelKind;
use crate::tile_matrix::{MatrixLabel, TileId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AccessMode {
    Read,
    ReadWrite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Access {
    pub tile: TileId,
    pub mode: AccessMode,
}

impl Access {
    pub fn read(tile: TileId) -> Self {
        Self {
            tile,
            mode: AccessMode::Read,
        }
    }

    pub fn read_write(tile: TileId) -> Self {
        Self {
            tile,
            mode: AccessMode::ReadWrite,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Step {
    Factorize,
    Invert,
    Product,
    Copy,
}

impl Step {
    /// 1, 2 or 3 for the algorithm steps, `None` for copies.
    pub fn number(self) -> Option<u8> {
        match self {
            Step::Factorize => Some(1),
            Step::Invert => Some(2),
            Step::Product => Some(3),
            Step::Copy => None,
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.number() {
            Some(n) => write!(f, "{n}"),
            None => f.write_str("copy"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Kernel(KernelKind),
    /// Tile snapshot into a working array.
    Copy,
}

impl TaskKind {
    pub fn is_copy(self) -> bool {
        matches!(self, TaskKind::Copy)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub id: usize,
    pub kind: TaskKind,
    pub step: Step,
    pub indices: Vec<usize>,
    /// Read operands in kernel argument order, then the single
    /// read-write output.
    pub accesses: Vec<Access>,
}

impl Task {
    pub fn is_copy(&self) -> bool {
        self.kind.is_copy()
    }

    pub fn output(&self) -> TileId {
        self.accesses
            .iter()
            .find(|a| a.mode == AccessMode::ReadWrite)
            .map(|a| a.tile)
            .expect("every task has an output tile")
    }

    pub fn inputs(&self) -> impl Iterator<Item = TileId> + '_ {
        self.accesses
            .iter()
            .filter(|a| a.mode == AccessMode::Read)
            .map(|a| a.tile)
    }

    /// `GEMM(3,1,2)`, `COPY_B(1,0)`.
    pub fn label(&self) -> String {
        let name = match self.kind {
            TaskKind::Kernel(k) => k.routine().to_string(),
            TaskKind::Copy => format!("COPY_{}", self.output().label),
        };
        format!("{name}({})", join_indices(&self.indices))
    }

    fn tag(&self) -> &'static str {
        match self.kind {
            TaskKind::Kernel(k) => k.tag(),
            TaskKind::Copy => "COPY",
        }
    }
}

fn join_indices(indices: &[usize]) -> String {
    indices
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let reads: Vec<String> = self.inputs().map(|t| t.to_string()).collect();
        let reads = if reads.is_empty() {
            "-".to_string()
        } else {
            reads.join(",")
        };
        write!(
            f,
            "{} {} {}({}) R:{} RW:{}",
            self.id,
            self.step,
            self.tag(),
            join_indices(&self.indices),
            reads,
            self.output()
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LoopDir {
    /// increasing index
    Up,
    /// decreasing index
    Down,
}

impl LoopDir {
    fn range(self, lo: usize, hi_excl: usize) -> Box<dyn Iterator<Item = usize>> {
        match self {
            LoopDir::Up => Box::new(lo..hi_excl),
            LoopDir::Down => Box::new((lo..hi_excl).rev()),
        }
    }
}

/// Direction of the innermost GEMM loop of steps 1, 2 and 3.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LoopOrder(pub [LoopDir; 3]);

impl LoopOrder {
    pub const UDU: LoopOrder = LoopOrder([LoopDir::Up, LoopDir::Down, LoopDir::Up]);
    pub const UUU: LoopOrder = LoopOrder([LoopDir::Up, LoopDir::Up, LoopDir::Up]);

    pub fn all() -> Vec<LoopOrder> {
        let dirs = [LoopDir::Up, LoopDir::Down];
        let mut out = Vec::with_capacity(8);
        for a in dirs {
            for b in dirs {
                for c in dirs {
                    out.push(LoopOrder([a, b, c]));
                }
            }
        }
        out
    }

    pub fn step(&self, step: usize) -> LoopDir {
        self.0[step - 1]
    }
}

impl Default for LoopOrder {
    fn default() -> Self {
        LoopOrder::UDU
    }
}

impl fmt::Display for LoopOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in self.0 {
            f.write_str(match d {
                LoopDir::Up => "U",
                LoopDir::Down => "D",
            })?;
        }
        Ok(())
    }
}

impl FromStr for LoopOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let dirs: Vec<LoopDir> = s
            .chars()
            .map(|c| match c.to_ascii_uppercase() {
                'U' => Ok(LoopDir::Up),
                'D' => Ok(LoopDir::Down),
                _ => Err(Error::Parse(format!("loop order {s:?} must be three of U or D, e.g. UDU"))),
            })
            .collect::<Result<_>>()?;
        let dirs: [LoopDir; 3] = dirs
            .try_into()
            .map_err(|_| Error::Parse(format!("loop order {s:?} must be three of U or D, e.g. UDU")))?;
        Ok(LoopOrder(dirs))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Placement {
    InPlace,
    OutOfPlace,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::InPlace => "in",
            Placement::OutOfPlace => "out",
        })
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in" | "in-place" => Ok(Placement::InPlace),
            "out" | "out-of-place" => Ok(Placement::OutOfPlace),
            _ => Err(Error::Parse(format!("placement {s:?} must be `in` or `out`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VariantConfig {
    pub placement: Placement,
    pub loops: LoopOrder,
    pub pipelined: bool,
    pub workers: usize,
}

impl Default for VariantConfig {
    fn default() -> Self {
        Self {
            placement: Placement::InPlace,
            loops: LoopOrder::UDU,
            pipelined: true,
            workers: 1,
        }
    }
}

impl VariantConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::InvalidSize("worker count must be at least 1".into()));
        }
        Ok(())
    }
}

impl fmt::Display for VariantConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-{}-{}",
            self.placement,
            self.loops,
            if self.pipelined { "pipelined" } else { "barriered" }
        )
    }
}

/// Ordered tasks of one or more steps. A barrier at position `p` orders
/// every task before index `p` ahead of every task from `p` on.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TaskStream {
    tiles_per_dim: usize,
    tasks: Vec<Task>,
    barriers: Vec<usize>,
}

impl TaskStream {
    pub fn tiles_per_dim(&self) -> usize {
        self.tiles_per_dim
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn barriers(&self) -> &[usize] {
        &self.barriers
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn kernel_count(&self) -> usize {
        self.tasks.iter().filter(|t| !t.is_copy()).count()
    }

    pub fn copy_count(&self) -> usize {
        self.tasks.iter().filter(|t| t.is_copy()).count()
    }

    pub fn count_kind(&self, kind: KernelKind) -> usize {
        self.tasks
            .iter()
            .filter(|t| t.kind == TaskKind::Kernel(kind))
            .count()
    }

    /// Reads of working-array tiles that no earlier task wrote.
    /// Tiles of `A` count as initial input.
    pub fn uninitialized_reads(&self) -> Vec<(usize, TileId)> {
        let mut written = HashSet::new();
        let mut missing = Vec::new();
        for task in &self.tasks {
            for tile in task.inputs() {
                if tile.label != MatrixLabel::A && !written.contains(&tile) {
                    missing.push((task.id, tile));
                }
            }
            written.insert(task.output());
        }
        missing
    }

    /// Line-oriented text form, one task per line plus `BARRIER` lines.
    pub fn to_text(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for TaskStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut barriers = self.barriers.iter().peekable();
        for (pos, task) in self.tasks.iter().enumerate() {
            while barriers.next_if(|&&b| b == pos).is_some() {
                writeln!(f, "BARRIER")?;
            }
            writeln!(f, "{task}")?;
        }
        Ok(())
    }
}

struct Builder {
    t: usize,
    tasks: Vec<Task>,
}

impl Builder {
    fn new(t: usize) -> Result<Self> {
        if t == 0 {
            return Err(Error::InvalidSize("tile count must be at least 1".into()));
        }
        Ok(Self { t, tasks: Vec::new() })
    }

    fn kernel(&mut self, kind: KernelKind, step: Step, indices: &[usize], reads: &[TileId], out: TileId) {
        self.push(TaskKind::Kernel(kind), step, indices, reads, out);
    }

    fn push(&mut self, kind: TaskKind, step: Step, indices: &[usize], reads: &[TileId], out: TileId) {
        let mut accesses: Vec<Access> = reads.iter().copied().map(Access::read).collect();
        accesses.push(Access::read_write(out));
        self.tasks.push(Task {
            id: self.tasks.len(),
            kind,
            step,
            indices: indices.to_vec(),
            accesses,
        });
    }

    fn copy(&mut self, dst: MatrixLabel, row: usize, col: usize) {
        self.push(
            TaskKind::Copy,
            Step::Copy,
            &[row, col],
            &[TileId::a(row, col)],
            TileId::new(dst, row, col),
        );
    }

    fn step1(&mut self, dir: LoopDir) {
        let a = TileId::a;
        let s = Step::Factorize;
        for j in 0..self.t {
            for k in 0..j {
                self.kernel(KernelKind::SyrkSub, s, &[j, k], &[a(j, k)], a(j, j));
            }
            self.kernel(KernelKind::Potrf, s, &[j], &[], a(j, j));
            for i in j + 1..self.t {
                for k in dir.range(0, j) {
                    self.kernel(KernelKind::Gemm, s, &[i, j, k], &[a(i, k), a(j, k)], a(i, j));
                }
            }
            for i in j + 1..self.t {
                self.kernel(KernelKind::Trsm, s, &[i, j], &[a(j, j)], a(i, j));
            }
        }
    }

    fn step2(&mut self, dir: LoopDir, placement: Placement) {
        let t = self.t;
        let a = TileId::a;
        let s = Step::Invert;
        let renamed = placement == Placement::OutOfPlace && t > 1;
        if renamed {
            for r in 0..t {
                for c in 0..=r {
                    self.copy(MatrixLabel::B, r, c);
                }
            }
        }
        let factor = |r, c| {
            if renamed {
                TileId::new(MatrixLabel::B, r, c)
            } else {
                a(r, c)
            }
        };
        let inv_diag = |j| {
            if renamed {
                TileId::new(MatrixLabel::C, j, j)
            } else {
                a(j, j)
            }
        };
        for j in (0..t).rev() {
            self.kernel(KernelKind::Trtri, s, &[j], &[], a(j, j));
            if renamed {
                self.copy(MatrixLabel::C, j, j);
            }
            for i in (j + 1..t).rev() {
                self.kernel(KernelKind::TrmmLeft, s, &[i, j], &[a(i, i)], a(i, j));
                for k in dir.range(j + 1, i) {
                    self.kernel(KernelKind::Gemm, s, &[i, j, k], &[a(i, k), factor(k, j)], a(i, j));
                }
                self.kernel(KernelKind::TrmmRightNeg, s, &[i, j], &[inv_diag(j)], a(i, j));
            }
        }
    }

    fn step3(&mut self, dir: LoopDir, placement: Placement, copy_diagonal: bool) {
        let t = self.t;
        let a = TileId::a;
        let s = Step::Product;
        let renamed = placement == Placement::OutOfPlace && t > 1;
        if renamed {
            for r in 0..t {
                for c in 0..=r {
                    if c < r || copy_diagonal {
                        self.copy(MatrixLabel::C, r, c);
                    }
                }
            }
        }
        let src = |r, c| {
            if renamed {
                TileId::new(MatrixLabel::C, r, c)
            } else {
                a(r, c)
            }
        };
        for i in 0..t {
            for j in 0..i {
                self.kernel(KernelKind::TrmmLeftT, s, &[i, j], &[src(i, i)], a(i, j));
            }
            self.kernel(KernelKind::Lauum, s, &[i], &[], a(i, i));
            for j in 0..i {
                for k in dir.range(i + 1, t) {
                    self.kernel(KernelKind::Gemm, s, &[i, j, k], &[src(k, i), src(k, j)], a(i, j));
                }
            }
            for k in i + 1..t {
                self.kernel(KernelKind::SyrkAddT, s, &[i, k], &[src(k, i)], a(i, i));
            }
        }
    }

    fn finish(self, barriers: Vec<usize>) -> TaskStream {
        TaskStream {
            tiles_per_dim: self.t,
            tasks: self.tasks,
            barriers,
        }
    }
}

/// Tile Cholesky factorization `A = L L^T`.
pub fn gen_step1(t: usize, dir: LoopDir) -> Result<TaskStream> {
    let mut b = Builder::new(t)?;
    b.step1(dir);
    Ok(b.finish(Vec::new()))
}

/// Triangular inversion `L -> L^-1`.
pub fn gen_step2(t: usize, dir: LoopDir, placement: Placement) -> Result<TaskStream> {
    let mut b = Builder::new(t)?;
    b.step2(dir, placement);
    Ok(b.finish(Vec::new()))
}

/// Product `A^-1 = L^-T L^-1`, starting from `L^-1` held in `A`.
pub fn gen_step3(t: usize, dir: LoopDir, placement: Placement) -> Result<TaskStream> {
    let mut b = Builder::new(t)?;
    b.step3(dir, placement, true);
    Ok(b.finish(Vec::new()))
}

/// All three steps, with barriers between them unless pipelined.
pub fn gen_inversion(t: usize, config: &VariantConfig) -> Result<TaskStream> {
    config.validate()?;
    let mut b = Builder::new(t)?;
    let mut boundaries = Vec::with_capacity(2);
    b.step1(config.loops.step(1));
    boundaries.push(b.tasks.len());
    b.step2(config.loops.step(2), config.placement);
    boundaries.push(b.tasks.len());
    // step 2 already snapshotted the diagonal of C
    b.step3(config.loops.step(3), config.placement, false);
    let barriers = if config.pipelined { Vec::new() } else { boundaries };
    Ok(b.finish(barriers))
}
