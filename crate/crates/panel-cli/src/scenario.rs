//! Bridge from the parsed configuration to core objects: basis (with cache),
//! physics, delay horizon and kernel (with cache and optional threads).

use crate::config::{ConfigError, ScenarioConfig};
use crate::fileio;
use panel_core::basis::{build_basis, BasisSet, Field};
use panel_core::delay::{build_kernel, compute_tstar, kernel_slab, DelayKernel, DelayParams};
use panel_core::dynamics::{suggest_n_s, InitialHistory, LyapunovWeights, PhysParams};
use panel_core::linalg::Mat;
use panel_core::PlateDomain;
use std::path::PathBuf;

/// Environment variable naming the cache directory for basis/kernel binaries.
pub const CACHE_ENV: &str = "PANEL_CACHE_DIR";

fn cfg_err(msg: String) -> ConfigError {
    ConfigError {
        problems: vec![msg],
    }
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV).map(PathBuf::from)
}

pub fn basis_from_config(cfg: &ScenarioConfig) -> Result<BasisSet, ConfigError> {
    cfg.require_sections(&["domain", "basis"])?;
    let lx = cfg
        .get_f64("domain", "lx")?
        .ok_or_else(|| cfg_err("[domain] lx is required".into()))?;
    let ly = cfg
        .get_f64("domain", "ly")?
        .ok_or_else(|| cfg_err("[domain] ly is required".into()))?;
    let nx = cfg
        .get_usize("basis", "nx")?
        .ok_or_else(|| cfg_err("[basis] nx is required".into()))?;
    let ny = cfg
        .get_usize("basis", "ny")?
        .ok_or_else(|| cfg_err("[basis] ny is required".into()))?;
    let quad_order = cfg
        .get_usize("basis", "quad_order")?
        .unwrap_or(2 * nx.max(ny) + 12);
    let domain = PlateDomain::new(lx, ly).map_err(|e| cfg_err(e.to_string()))?;
    if let Some(dir) = cache_dir() {
        std::fs::create_dir_all(&dir).ok();
        let probe = build_hash_name(lx, ly, nx, ny, quad_order);
        let path = dir.join(probe);
        if path.exists() {
            if let Ok(b) = fileio::load_basis(&path, domain, nx, ny, quad_order) {
                return Ok(b);
            }
        }
        let basis = build_basis(domain, nx, ny, quad_order).map_err(|e| cfg_err(e.to_string()))?;
        fileio::save_basis(&path, &basis).ok();
        return Ok(basis);
    }
    build_basis(domain, nx, ny, quad_order).map_err(|e| cfg_err(e.to_string()))
}

fn build_hash_name(lx: f64, ly: f64, nx: usize, ny: usize, quad_order: usize) -> String {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(&lx.to_le_bytes());
    bytes.extend_from_slice(&ly.to_le_bytes());
    bytes.extend_from_slice(&(nx as u64).to_le_bytes());
    bytes.extend_from_slice(&(ny as u64).to_le_bytes());
    bytes.extend_from_slice(&(quad_order as u64).to_le_bytes());
    format!("basis_{:016x}.bin", panel_core::fnv1a64(&bytes))
}

pub fn physics_from_config(
    cfg: &ScenarioConfig,
    basis: &BasisSet,
) -> Result<PhysParams, ConfigError> {
    cfg.require_sections(&["physics"])?;
    let flow_speed = cfg
        .get_f64("physics", "flow_speed")?
        .ok_or_else(|| cfg_err("[physics] flow_speed is required".into()))?;
    let damping = cfg.get_f64("physics", "damping")?.unwrap_or(0.0);
    let prestress = cfg.get_f64("physics", "prestress")?.unwrap_or(0.0);
    let stiffness = cfg
        .get_f64("physics", "stiffness")?
        .ok_or_else(|| cfg_err("[physics] stiffness (b2 > 0) is required".into()))?;
    let load_kind = cfg
        .section("physics")
        .and_then(|s| s.get("load"))
        .unwrap_or("constant");
    let load_scale = cfg.get_f64("physics", "load_scale")?.unwrap_or(1.0);
    let load = match load_kind {
        "zero" => Field::zeros(basis.n()),
        "constant" => basis
            .project(|_, _| load_scale)
            .map_err(|e| cfg_err(e.to_string()))?,
        other => return Err(cfg_err(format!("[physics] load: unknown kind '{other}'"))),
    };
    let flow_coupling = cfg.get_bool("physics", "flow_coupling")?.unwrap_or(true);
    let flow_damping_scale = cfg.get_f64("physics", "flow_damping_scale")?.unwrap_or(1.0);
    let phys = PhysParams {
        flow_speed,
        damping,
        prestress,
        stiffness,
        load,
        t_star: 0.0,
        flow_coupling,
        flow_damping_scale,
    };
    phys.validate().map_err(|e| cfg_err(e.to_string()))?;
    Ok(phys)
}

/// Delay horizon plus kernel settings resolved from the config.
pub struct DelaySetup {
    pub t_star: f64,
    pub params: DelayParams,
    pub dt: f64,
}

pub fn delay_from_config(
    cfg: &ScenarioConfig,
    basis: &BasisSet,
    phys: &PhysParams,
) -> Result<DelaySetup, ConfigError> {
    let grid = cfg.get_usize("delay", "tstar_grid")?.unwrap_or(4096);
    let t_star =
        compute_tstar(phys.flow_speed, &basis.domain, grid).map_err(|e| cfg_err(e.to_string()))?;
    let n_theta = cfg.get_usize("delay", "n_theta")?.unwrap_or(32);
    let n_s = match cfg.get_usize("delay", "n_s")?.unwrap_or(0) {
        0 => suggest_n_s(basis, t_star).map_err(|e| cfg_err(e.to_string()))?,
        v => v,
    };
    let params = DelayParams {
        flow_speed: phys.flow_speed,
        t_star,
        n_theta,
        n_s,
    };
    params.validate().map_err(|e| cfg_err(e.to_string()))?;
    Ok(DelaySetup {
        t_star,
        dt: params.dt(),
        params,
    })
}

/// Assemble (or load) the kernel, spreading slab assembly over `threads`.
/// Slabs are written into disjoint slots, so the result is identical to the
/// serial build regardless of thread count.
pub fn kernel_from_setup(
    basis: &BasisSet,
    setup: &DelaySetup,
    threads: usize,
) -> Result<DelayKernel, ConfigError> {
    if let Some(dir) = cache_dir() {
        std::fs::create_dir_all(&dir).ok();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&basis.build_hash().to_le_bytes());
        bytes.extend_from_slice(&setup.params.flow_speed.to_le_bytes());
        bytes.extend_from_slice(&setup.params.t_star.to_le_bytes());
        bytes.extend_from_slice(&(setup.params.n_theta as u64).to_le_bytes());
        bytes.extend_from_slice(&(setup.params.n_s as u64).to_le_bytes());
        let path = dir.join(format!("kernel_{:016x}.bin", panel_core::fnv1a64(&bytes)));
        if path.exists() {
            if let Ok(k) = fileio::load_kernel(&path, basis, &setup.params) {
                return Ok(k);
            }
        }
        let kernel = assemble_kernel(basis, &setup.params, threads)?;
        fileio::save_kernel(&path, &kernel).ok();
        return Ok(kernel);
    }
    assemble_kernel(basis, &setup.params, threads)
}

fn assemble_kernel(
    basis: &BasisSet,
    params: &DelayParams,
    threads: usize,
) -> Result<DelayKernel, ConfigError> {
    if threads <= 1 {
        return build_kernel(basis, params).map_err(|e| cfg_err(e.to_string()));
    }
    params.validate().map_err(|e| cfg_err(e.to_string()))?;
    let n_slabs = params.n_s + 1;
    let mut slabs: Vec<Mat> = vec![Mat::zeros(0, 0); n_slabs];
    let workers = threads.min(n_slabs);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            handles.push(scope.spawn(move || {
                let mut out = Vec::new();
                let mut m = w;
                while m < n_slabs {
                    out.push((m, kernel_slab(basis, params, m)));
                    m += workers;
                }
                out
            }));
        }
        for h in handles {
            for (m, slab) in h.join().expect("kernel worker") {
                slabs[m] = slab;
            }
        }
    });
    let dt = params.dt();
    let max_speed = params.flow_speed + 1.0;
    let cell = basis.domain.lx.min(basis.domain.ly) / basis.quad_order as f64;
    Ok(DelayKernel {
        params: params.clone(),
        dt,
        s_weights: panel_core::quad::trapezoid_weights(params.n_s, dt),
        slabs,
        basis_hash: basis.build_hash(),
        coarse_shift_warning: dt * max_speed > 4.0 * cell,
    })
}

/// Time-loop settings from [time].
pub struct TimeSetup {
    pub n_steps: u64,
    pub output_stride: u64,
    pub checkpoint_stride: u64,
    pub u0: Field,
    pub v0: Field,
    pub init_history: InitialHistory,
}

pub fn time_from_config(cfg: &ScenarioConfig, basis: &BasisSet) -> Result<TimeSetup, ConfigError> {
    cfg.require_sections(&["time"])?;
    let n_steps = cfg
        .get_u64("time", "n_steps")?
        .ok_or_else(|| cfg_err("[time] n_steps is required".into()))?;
    let output_stride = cfg.get_u64("time", "output_stride")?.unwrap_or(1).max(1);
    let checkpoint_stride = cfg.get_u64("time", "checkpoint_stride")?.unwrap_or(0);
    let mut u0 = Field::zeros(basis.n());
    if let Some(modes) = cfg.get_mode_list("time", "u0")? {
        for (ix, iy, amp) in modes {
            if ix >= basis.nx || iy >= basis.ny {
                return Err(cfg_err(format!(
                    "[time] u0: mode ({ix},{iy}) outside the {}x{} basis",
                    basis.nx, basis.ny
                )));
            }
            u0.coeffs[basis.mode_index(ix, iy)] = amp;
        }
    }
    let mut v0 = Field::zeros(basis.n());
    if let Some(modes) = cfg.get_mode_list("time", "v0")? {
        for (ix, iy, amp) in modes {
            if ix >= basis.nx || iy >= basis.ny {
                return Err(cfg_err(format!(
                    "[time] v0: mode ({ix},{iy}) outside the {}x{} basis",
                    basis.nx, basis.ny
                )));
            }
            v0.coeffs[basis.mode_index(ix, iy)] = amp;
        }
    }
    let init_history = match cfg
        .section("time")
        .and_then(|s| s.get("history"))
        .unwrap_or("frozen")
    {
        "frozen" => InitialHistory::Frozen,
        "zero" => InitialHistory::Zero,
        other => return Err(cfg_err(format!("[time] history: unknown kind '{other}'"))),
    };
    Ok(TimeSetup {
        n_steps,
        output_stride,
        checkpoint_stride,
        u0,
        v0,
        init_history,
    })
}

pub fn lyapunov_weights(_cfg: &ScenarioConfig) -> LyapunovWeights {
    LyapunovWeights::default()
}
