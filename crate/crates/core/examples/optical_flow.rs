//! Recover a known translation between two textured frames.

use swta::flow::{estimate_flow_traced, FlowParams};
use swta::plane::Plane;

fn texture(h: usize, w: usize, dx: f32, dy: f32) -> Plane {
    Plane::from_fn(h, w, |y, x| {
        let (y, x) = (y as f32 - dy, x as f32 - dx);
        128.0 + 60.0 * (0.3 * x).sin() * (0.25 * y).cos() + 30.0 * (0.17 * (x + y)).sin()
    })
}

fn main() -> swta::Result<()> {
    let (dx, dy) = (1.5, -0.5);
    let a = texture(64, 64, 0.0, 0.0);
    let b = texture(64, 64, dx, dy);
    let (flow, energy) = estimate_flow_traced(&a, &b, &FlowParams::default())?;

    let margin = 8;
    let (mut su, mut sv, mut n) = (0.0, 0.0, 0.0);
    for y in margin..64 - margin {
        for x in margin..64 - margin {
            su += flow.u.get(y, x) as f64;
            sv += flow.v.get(y, x) as f64;
            n += 1.0;
        }
    }
    println!("true shift ({dx}, {dy}), interior mean flow ({:.3}, {:.3})", su / n, sv / n);
    println!(
        "energy over the finest level: {:.1} -> {:.1}",
        energy.first().copied().unwrap_or(0.0),
        energy.last().copied().unwrap_or(0.0)
    );
    Ok(())
}
