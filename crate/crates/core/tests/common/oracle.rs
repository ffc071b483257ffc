//! Direct evaluations of the closed-form rules, written without reference
//! to the library code.

use rampflow::ctm::FreewayNetwork;

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }
}

/// Waiting added upstream by queue balancing, veh·h.
pub fn ramp_bound(horizon: f64, q_bar_us: f64, q_bar_ds: f64) -> f64 {
    horizon * q_bar_us * q_bar_ds / (q_bar_us + q_bar_ds)
}

/// Time saved in the mainline by the upstream holding, veh·h. `None` when
/// the remaining storage is not positive.
#[allow(clippy::too_many_arguments)]
pub fn ml_bound(
    horizon: f64,
    length: f64,
    rho_c: f64,
    rho: f64,
    q_bar_us: f64,
    q_bar_ds: f64,
    q_ds: f64,
    delta_phi: f64,
    t_con: f64,
) -> Option<f64> {
    let storage = q_bar_ds - q_ds + length * (rho_c - rho);
    (storage > 0.0).then(|| horizon * q_bar_us * delta_phi * t_con / storage)
}

pub fn alinea(last: f64, gain: f64, rho_c: f64, rho: f64) -> f64 {
    last - gain * (rho - rho_c)
}

/// `(rate, lower, upper, conflict)` of the saturated command.
#[allow(clippy::too_many_arguments)]
pub fn saturate(
    ideal: f64,
    min_flow: f64,
    max_flow: f64,
    q_bar: f64,
    q_star: f64,
    q: f64,
    demand: f64,
    dt: f64,
) -> (f64, f64, f64, bool) {
    let lower = f64::max(min_flow, demand + (q - q_bar) / dt);
    let upper = f64::min(max_flow, demand + (q - q_star) / dt);
    let conflict = lower > upper;
    let r = if conflict {
        lower
    } else if ideal < lower {
        lower
    } else if ideal > upper {
        upper
    } else {
        ideal
    };
    (r.max(0.0).min(max_flow), lower, upper, conflict)
}

/// One CTM step: `(densities, queues)` after the tick.
pub fn ctm_step(
    net: &FreewayNetwork,
    rho: &[f64],
    q: &[f64],
    rates: &[f64],
    arrivals: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let t = net.tick;
    let n = rho.len();
    let send = |k: usize| {
        let fd = &net.cells[k].fd;
        let r = rho[k].max(0.0);
        let vf = fd.capacity / fd.critical_density;
        if r <= fd.critical_density {
            vf * r
        } else if net.nonmonotonic {
            let x = f64::min(1.0, (r - fd.critical_density) / (fd.jam_density - fd.critical_density));
            fd.capacity - fd.capacity * fd.capacity_drop * x
        } else {
            fd.capacity
        }
    };
    let receive = |k: usize| {
        let fd = &net.cells[k].fd;
        let w = fd.capacity / (fd.jam_density - fd.critical_density);
        f64::min(fd.capacity, f64::max(0.0, w * (fd.jam_density - rho[k].max(0.0))))
    };
    let wanted: Vec<f64> = (0..q.len())
        .map(|i| f64::min(rates[i], arrivals[i] + q[i] / t))
        .collect();
    let mut inflow = vec![0.0; n];
    let mut outflow = vec![0.0; n];
    let mut released = vec![0.0; q.len()];
    for k in 0..n {
        let beta = if k > 0 { net.cells[k - 1].offramp_split } else { 0.0 };
        let main = if k > 0 { send(k - 1) * (1.0 - beta) } else { 0.0 };
        let ramps: Vec<usize> = (0..q.len()).filter(|&i| net.ramps[i].attach_cell == k).collect();
        let on: f64 = ramps.iter().map(|&i| wanted[i]).sum();
        let cap = receive(k);
        let scale = if main + on > cap { cap / (main + on) } else { 1.0 };
        for &i in &ramps {
            released[i] = wanted[i] * scale;
        }
        inflow[k] = (main + on) * scale;
        if k > 0 {
            outflow[k - 1] = main * scale / (1.0 - beta);
        }
    }
    outflow[n - 1] = send(n - 1);
    let rho_next = (0..n)
        .map(|k| f64::max(0.0, rho[k] + (inflow[k] - outflow[k]) * t / net.cells[k].length))
        .collect();
    let q_next = (0..q.len())
        .map(|i| (q[i] + (arrivals[i] - released[i]) * t).clamp(0.0, net.ramps[i].max_queue))
        .collect();
    (rho_next, q_next)
}

/// Steady-state covariance of a filter with identity dynamics and
/// identity observation, by plain Riccati iteration on 2x2 arrays.
pub fn riccati(q: [[f64; 2]; 2], r: [[f64; 2]; 2], p0: [[f64; 2]; 2], iters: usize) -> [[f64; 2]; 2] {
    let add = |a: [[f64; 2]; 2], b: [[f64; 2]; 2]| {
        [[a[0][0] + b[0][0], a[0][1] + b[0][1]], [a[1][0] + b[1][0], a[1][1] + b[1][1]]]
    };
    let mul = |a: [[f64; 2]; 2], b: [[f64; 2]; 2]| {
        let mut c = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        c
    };
    let inv = |a: [[f64; 2]; 2]| {
        let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]]
    };
    let mut p = p0;
    for _ in 0..iters {
        let prior = add(p, q);
        let k = mul(prior, inv(add(prior, r)));
        let i_k = [[1.0 - k[0][0], -k[0][1]], [-k[1][0], 1.0 - k[1][1]]];
        p = mul(i_k, prior);
        let off = 0.5 * (p[0][1] + p[1][0]);
        p[0][1] = off;
        p[1][0] = off;
    }
    p
}

/// Scalar steady state of the same recursion: the positive root of
/// `P^2 + Q P - Q R = 0`.
pub fn riccati_scalar(q: f64, r: f64) -> f64 {
    0.5 * (-q + (q * q + 4.0 * q * r).sqrt())
}
