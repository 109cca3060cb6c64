//! Regenerates the synthetic CSV data under `configs/data`.
//!
//!     cargo run -p nvreso-core --example make_fixtures -- configs/data

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use nvreso_core::fitting::{decaying_sinusoid, hahn_echo};
use nvreso_core::resonator::{s11_response, ResonatorState};
use nvreso_core::spin::uniform_times;

fn main() -> std::io::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "configs/data".into()));
    std::fs::create_dir_all(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let noise = Normal::new(0.0, 1.0).unwrap();

    // stretched Rabi oscillation, 8 MHz, τ = 0.5 µs, n = 1.5
    let mut w = BufWriter::new(File::create(dir.join("rabi_trace.csv"))?);
    writeln!(w, "t_us,population")?;
    for t in uniform_times(1.0, 400) {
        let y = decaying_sinusoid(t, 8.0, 0.5, 1.5, 0.4, 0.5, 0.45) + 0.01 * noise.sample(&mut rng);
        writeln!(w, "{t},{y}")?;
    }

    // echo decay with ESEEM, τ = 45 µs
    let mut w = BufWriter::new(File::create(dir.join("hahn_echo.csv"))?);
    writeln!(w, "t_us,signal")?;
    for t in uniform_times(200.0, 400) {
        let y = hahn_echo(t, 45.0, 1.5, 0.35, 0.15, 0.6, 0.2, 0.5) + 0.01 * noise.sample(&mut rng);
        writeln!(w, "{t},{y}")?;
    }

    // complex reflection, Qi = 1275, Qe = 1328, ±5 linewidths
    let state = ResonatorState::new(2.967, 1275.0, 1328.0).unwrap();
    let lw = state.f0 / state.q_loaded();
    let mut w = BufWriter::new(File::create(dir.join("s11.csv"))?);
    writeln!(w, "f_ghz,re,im")?;
    for i in 0..301 {
        let f = state.f0 + lw * 10.0 * (i as f64 / 300.0 - 0.5);
        let g = s11_response(&state, f);
        let (re, im) = (
            g.re + 1e-3 * noise.sample(&mut rng),
            g.im + 1e-3 * noise.sample(&mut rng),
        );
        writeln!(w, "{f},{re},{im}")?;
    }
    Ok(())
}
