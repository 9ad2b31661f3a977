//! File formats: binary caches for basis matrices and delay kernels,
//! checkpoints, CSV series and the functional-set text format.
//!
//! All binary payloads are little-endian; every format starts with a magic
//! tag and a version so loaders can refuse foreign files. Floats in text
//! outputs carry 17 significant digits and round-trip exactly.

use panel_core::basis::BasisSet;
use panel_core::delay::{DelayKernel, DelayParams};
use panel_core::dynamics::StepperCheckpoint;
use panel_core::functionals::{FunctionalKind, FunctionalSet};
use panel_core::linalg::Mat;
use std::io::{self, Read, Write};
use std::path::Path;

pub const BASIS_MAGIC: &[u8; 8] = b"PNLBAS1\0";
pub const KERNEL_MAGIC: &[u8; 8] = b"PNLKER1\0";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PNLCKP1\0";
pub const FORMAT_VERSION: u32 = 1;

/// 17-significant-digit decimal float; round-trips f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn bad(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

struct Writer<W: Write> {
    out: W,
}

impl<W: Write> Writer<W> {
    fn u32(&mut self, v: u32) -> io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> io::Result<()> {
        self.out.write_all(&v.to_le_bytes())
    }
    fn f64_slice(&mut self, v: &[f64]) -> io::Result<()> {
        for x in v {
            self.f64(*x)?;
        }
        Ok(())
    }
}

struct Reader<R: Read> {
    inp: R,
}

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> io::Result<u32> {
        let mut b = [0u8; 4];
        self.inp.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }
    fn u64(&mut self) -> io::Result<u64> {
        let mut b = [0u8; 8];
        self.inp.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> io::Result<f64> {
        let mut b = [0u8; 8];
        self.inp.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }
    fn f64_vec(&mut self, n: usize) -> io::Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
    fn magic(&mut self, expect: &[u8; 8]) -> io::Result<()> {
        let mut b = [0u8; 8];
        self.inp.read_exact(&mut b)?;
        if &b != expect {
            return Err(bad("wrong file magic"));
        }
        Ok(())
    }
}

/// Write the basis cache: header {Lx, Ly, nx, ny, quad_order, version} then
/// M, K, G, Dx row-major.
pub fn save_basis(path: &Path, basis: &BasisSet) -> io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = Writer {
        out: io::BufWriter::new(file),
    };
    w.out.write_all(BASIS_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.f64(basis.domain.lx)?;
    w.f64(basis.domain.ly)?;
    w.u64(basis.nx as u64)?;
    w.u64(basis.ny as u64)?;
    w.u64(basis.quad_order as u64)?;
    for m in [&basis.m, &basis.k, &basis.g, &basis.dx] {
        w.f64_slice(&m.data)?;
    }
    w.out.flush()
}

/// Load cached matrices into a freshly constructed basis, refusing header
/// mismatches. The beams and quadrature are rebuilt from the header tuple
/// (cheap and bit-reproducible); the matrices come from the file.
pub fn load_basis(
    path: &Path,
    domain: panel_core::PlateDomain,
    nx: usize,
    ny: usize,
    quad_order: usize,
) -> io::Result<BasisSet> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader {
        inp: io::BufReader::new(file),
    };
    r.magic(BASIS_MAGIC)?;
    if r.u32()? != FORMAT_VERSION {
        return Err(bad("basis cache version mismatch"));
    }
    let (lx, ly) = (r.f64()?, r.f64()?);
    let (fnx, fny, ford) = (r.u64()? as usize, r.u64()? as usize, r.u64()? as usize);
    if lx != domain.lx || ly != domain.ly || fnx != nx || fny != ny || ford != quad_order {
        return Err(bad("basis cache header does not match the request"));
    }
    let mut basis = panel_core::basis::build_basis(domain, nx, ny, quad_order)
        .map_err(|e| bad(e.to_string()))?;
    let n = basis.n();
    for m in [&mut basis.m, &mut basis.k, &mut basis.g, &mut basis.dx] {
        m.data = r.f64_vec(n * n)?;
    }
    Ok(basis)
}

/// Write the kernel cache: header {basis hash, U, t*, n_theta, n_s, version}
/// plus the raw slab tensors.
pub fn save_kernel(path: &Path, kernel: &DelayKernel) -> io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = Writer {
        out: io::BufWriter::new(file),
    };
    w.out.write_all(KERNEL_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u64(kernel.basis_hash)?;
    w.f64(kernel.params.flow_speed)?;
    w.f64(kernel.params.t_star)?;
    w.u64(kernel.params.n_theta as u64)?;
    w.u64(kernel.params.n_s as u64)?;
    w.u32(kernel.coarse_shift_warning as u32)?;
    let n = kernel.n() as u64;
    w.u64(n)?;
    for slab in &kernel.slabs {
        w.f64_slice(&slab.data)?;
    }
    w.out.flush()
}

/// Load a kernel cache; refuses on basis-hash or parameter mismatch.
pub fn load_kernel(path: &Path, basis: &BasisSet, params: &DelayParams) -> io::Result<DelayKernel> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader {
        inp: io::BufReader::new(file),
    };
    r.magic(KERNEL_MAGIC)?;
    if r.u32()? != FORMAT_VERSION {
        return Err(bad("kernel cache version mismatch"));
    }
    let hash = r.u64()?;
    if hash != basis.build_hash() {
        return Err(bad("kernel cache was built against a different basis"));
    }
    let (u, t_star) = (r.f64()?, r.f64()?);
    let (n_theta, n_s) = (r.u64()? as usize, r.u64()? as usize);
    if u != params.flow_speed
        || t_star != params.t_star
        || n_theta != params.n_theta
        || n_s != params.n_s
    {
        return Err(bad("kernel cache parameters do not match the request"));
    }
    let warn = r.u32()? != 0;
    let n = r.u64()? as usize;
    if n != basis.n() {
        return Err(bad("kernel cache dimension mismatch"));
    }
    let mut slabs = Vec::with_capacity(n_s + 1);
    for _ in 0..=n_s {
        let data = r.f64_vec(n * n)?;
        slabs.push(Mat {
            rows: n,
            cols: n,
            data,
        });
    }
    Ok(DelayKernel {
        params: params.clone(),
        dt: params.dt(),
        s_weights: panel_core::quad::trapezoid_weights(params.n_s, params.dt()),
        slabs,
        basis_hash: hash,
        coarse_shift_warning: warn,
    })
}

/// Checkpoint: {config hash, step counter, modal state, force memory, the
/// full history ring, identity accumulators}.
pub fn save_checkpoint(path: &Path, config_hash: u64, ck: &StepperCheckpoint) -> io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = Writer {
        out: io::BufWriter::new(file),
    };
    w.out.write_all(CHECKPOINT_MAGIC)?;
    w.u32(FORMAT_VERSION)?;
    w.u64(config_hash)?;
    w.u64(ck.step_index)?;
    w.f64(ck.t)?;
    w.u64(ck.a.len() as u64)?;
    w.f64_slice(&ck.a)?;
    w.f64_slice(&ck.adot)?;
    match &ck.prev_force {
        Some(f) => {
            w.u32(1)?;
            w.f64_slice(f)?;
        }
        None => w.u32(0)?,
    }
    w.u64(ck.history_rows.len() as u64)?;
    for row in &ck.history_rows {
        w.f64_slice(row)?;
    }
    w.u64(ck.history_pushed)?;
    w.f64(ck.acc_diss)?;
    w.f64(ck.acc_cross)?;
    w.f64(ck.last_diss)?;
    w.f64(ck.last_cross)?;
    w.f64(ck.e_pl0)?;
    w.f64(ck.e_pl_max)?;
    w.out.flush()
}

pub fn load_checkpoint(path: &Path, expect_config_hash: u64) -> io::Result<StepperCheckpoint> {
    let file = std::fs::File::open(path)?;
    let mut r = Reader {
        inp: io::BufReader::new(file),
    };
    r.magic(CHECKPOINT_MAGIC)?;
    if r.u32()? != FORMAT_VERSION {
        return Err(bad("checkpoint version mismatch"));
    }
    let hash = r.u64()?;
    if hash != expect_config_hash {
        return Err(bad("checkpoint belongs to a different configuration"));
    }
    let step_index = r.u64()?;
    let t = r.f64()?;
    let n = r.u64()? as usize;
    let a = r.f64_vec(n)?;
    let adot = r.f64_vec(n)?;
    let prev_force = if r.u32()? == 1 {
        Some(r.f64_vec(n)?)
    } else {
        None
    };
    let rows = r.u64()? as usize;
    let mut history_rows = Vec::with_capacity(rows);
    for _ in 0..rows {
        history_rows.push(r.f64_vec(n)?);
    }
    Ok(StepperCheckpoint {
        step_index,
        t,
        a,
        adot,
        prev_force,
        history_rows,
        history_pushed: r.u64()?,
        acc_diss: r.f64()?,
        acc_cross: r.f64()?,
        last_diss: r.f64()?,
        last_cross: r.f64()?,
        e_pl0: r.f64()?,
        e_pl_max: r.f64()?,
    })
}

/// CSV writer with a fixed header; values at 17 significant digits.
pub struct CsvWriter {
    buf: String,
    cols: usize,
}

impl CsvWriter {
    pub fn new(header: &[&str]) -> Self {
        CsvWriter {
            buf: format!("{}\n", header.join(",")),
            cols: header.len(),
        }
    }

    pub fn row(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.cols);
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                self.buf.push(',');
            }
            self.buf.push_str(&fmt_f64(*v));
        }
        self.buf.push('\n');
    }

    pub fn finish(self) -> String {
        self.buf
    }
}

/// Functional-set text format: kind line, meta line, dimensions, then the
/// evaluation matrix row-major. Row order is the builder's documented order
/// (lexicographic vertices, ascending eigenvalue, lexicographic lattice).
pub fn functional_set_text(fs: &FunctionalSet) -> String {
    let mut s = String::new();
    match &fs.kind {
        FunctionalKind::Nodes { h } => s.push_str(&format!("kind nodes\nmeta h {}\n", fmt_f64(*h))),
        FunctionalKind::Modes { n } => s.push_str(&format!("kind modes\nmeta n {n}\n")),
        FunctionalKind::Averages { h } => {
            s.push_str(&format!("kind averages\nmeta h {}\n", fmt_f64(*h)))
        }
        FunctionalKind::Custom(name) => s.push_str(&format!("kind custom\nmeta name {name}\n")),
    }
    s.push_str(&format!(
        "rows {} cols {} rank {}\n",
        fs.matrix.rows, fs.matrix.cols, fs.rank
    ));
    for i in 0..fs.matrix.rows {
        let row: Vec<String> = fs.matrix.row(i).iter().map(|v| fmt_f64(*v)).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use panel_core::basis::build_basis;
    use panel_core::delay::build_kernel;
    use panel_core::PlateDomain;

    #[test]
    fn float_formatting_round_trips() {
        for v in [
            0.1,
            -3.0,
            core::f64::consts::PI,
            1.0 / 3.0,
            6.02e23,
            -5.5e-307,
        ] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
    }

    #[test]
    fn basis_cache_round_trips_and_validates() {
        let dir = std::env::temp_dir().join("panel_basis_cache_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("basis.bin");
        let dom = PlateDomain::unit_square();
        let basis = build_basis(dom, 3, 2, 16).unwrap();
        save_basis(&path, &basis).unwrap();
        let loaded = load_basis(&path, dom, 3, 2, 16).unwrap();
        assert_eq!(loaded.m.data, basis.m.data);
        assert_eq!(loaded.dx.data, basis.dx.data);
        assert!(load_basis(&path, dom, 3, 3, 16).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn kernel_cache_refuses_hash_mismatch() {
        let dir = std::env::temp_dir().join("panel_kernel_cache_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("kernel.bin");
        let dom = PlateDomain::unit_square();
        let basis = build_basis(dom, 2, 2, 16).unwrap();
        let params = DelayParams {
            flow_speed: 0.5,
            t_star: 2.0,
            n_theta: 16,
            n_s: 4,
        };
        let kernel = build_kernel(&basis, &params).unwrap();
        save_kernel(&path, &kernel).unwrap();
        let loaded = load_kernel(&path, &basis, &params).unwrap();
        for (a, b) in loaded.slabs.iter().zip(kernel.slabs.iter()) {
            assert_eq!(a.data, b.data);
        }
        let other = build_basis(dom, 2, 2, 18).unwrap();
        assert!(load_kernel(&path, &other, &params).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }
}
