use bds_core::heuristics::next_permutation;

/// Discrete-event simulation: at every event time, free machines (lowest
/// index first) take the waiting job that arrived first, ties by sequence
/// position.
pub fn event_makespan(op: &[Vec<f64>], machines: &[usize], seq: &[usize]) -> f64 {
    let mut arrivals: Vec<(f64, usize, usize)> =
        seq.iter().enumerate().map(|(k, &j)| (0.0, k, j)).collect();
    for (s, &m) in machines.iter().enumerate() {
        arrivals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        let mut free = vec![0.0f64; m];
        let mut waiting: Vec<(f64, usize, usize)> = Vec::new();
        let mut next = 0;
        let mut done = Vec::with_capacity(seq.len());
        let mut t = 0.0f64;
        while done.len() < seq.len() {
            while next < arrivals.len() && arrivals[next].0 <= t {
                waiting.push(arrivals[next]);
                next += 1;
            }
            let mut progressed = false;
            while !waiting.is_empty() {
                let Some(k) = (0..m).find(|&k| free[k] <= t) else {
                    break;
                };
                let (_, pos, job) = waiting.remove(0);
                free[k] = t + op[s][job];
                done.push((free[k], pos, job));
                progressed = true;
            }
            if progressed {
                continue;
            }
            let mut candidates = Vec::new();
            if next < arrivals.len() {
                candidates.push(arrivals[next].0);
            }
            if !waiting.is_empty() {
                candidates.extend(free.iter().copied().filter(|&f| f > t));
            }
            t = candidates.into_iter().fold(f64::INFINITY, f64::min);
        }
        arrivals = done;
    }
    arrivals.iter().map(|a| a.0).fold(0.0, f64::max)
}

pub fn brute_min(op: &[Vec<f64>], machines: &[usize], n: usize) -> f64 {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = f64::INFINITY;
    loop {
        best = best.min(event_makespan(op, machines, &perm));
        if !next_permutation(&mut perm) {
            return best;
        }
    }
}
