//! Parametric receiver routes on the normalized field.

use serde::{Deserialize, Serialize};

use crate::play::FRAME_HZ;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Go,
    Out,
    In,
    Curl,
    Post,
    Flat,
}

impl Route {
    pub const ALL: [Route; 6] = [Route::Go, Route::Out, Route::In, Route::Curl, Route::Post, Route::Flat];

    /// Waypoints relative to the release point for stem depth `depth`;
    /// `out` is +1 when the sideline is toward +y.
    fn waypoints(self, depth: f64, out: f64) -> Vec<[f64; 2]> {
        match self {
            Route::Go => vec![[45.0, 0.0]],
            Route::Out => vec![[depth, 0.0], [depth, out * 20.0]],
            Route::In => vec![[depth, 0.0], [depth, -out * 25.0]],
            Route::Curl => vec![[depth + 2.0, 0.0], [depth, -out * 1.0]],
            Route::Post => vec![[depth, 0.0], [depth + 25.0, -out * 15.0]],
            Route::Flat => vec![[1.5, out * 2.0], [2.5, out * 25.0]],
        }
    }
}

const TOP_SPEED: f64 = 7.0;
const ACCEL: f64 = 8.0;

/// Receiver path for `n` post-snap frames starting at `start` (frame 0 is the
/// snap). Movement follows the polyline at an accelerating speed and stops at
/// its end.
pub(crate) fn route_path(start: [f64; 2], route: Route, depth: f64, out: f64, n: usize) -> Vec<[f64; 2]> {
    let mut pts = vec![start];
    for w in route.waypoints(depth, out) {
        pts.push([start[0] + w[0], start[1] + w[1]]);
    }
    let dt = 1.0 / FRAME_HZ;
    let mut out_path = Vec::with_capacity(n);
    let mut s = 0.0;
    let mut speed: f64 = 0.0;
    for _ in 0..n {
        out_path.push(point_at(&pts, s));
        speed = (speed + ACCEL * dt).min(TOP_SPEED);
        s += speed * dt;
    }
    out_path
}

fn point_at(pts: &[[f64; 2]], mut s: f64) -> [f64; 2] {
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        if s <= len {
            let f = if len > 0.0 { s / len } else { 0.0 };
            return [a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])];
        }
        s -= len;
    }
    *pts.last().unwrap()
}
