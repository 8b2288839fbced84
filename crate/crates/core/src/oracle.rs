//! Scalar-loop reference implementations. Nothing here calls into the
//! tensor engine; inputs and outputs are plain nested vectors.

pub const LOSS_ABS_TOL: f64 = 1e-10;
pub const GRAD_REL_TOL: f64 = 1e-5;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Contrastive loss by explicit enumeration of every index tuple.
///
/// `z[a][t]` is the embedding of anchor `a` at step `t`, anchors stored
/// view-major (`a = v·B + b`) so that `labels[a % B]` is the anchor's label.
pub fn oracle_contrastive(
    z: &[Vec<Vec<f64>>],
    labels: &[usize],
    views: usize,
    tau: f64,
    supervised: bool,
) -> f64 {
    let n = z.len();
    let b = n / views;
    let steps = z[0].len();
    let same = |a: usize, p: usize| {
        if supervised {
            labels[a % b] == labels[p % b]
        } else {
            a % b == p % b
        }
    };
    let mut total = 0.0;
    for a in 0..n {
        let mut group = 0usize;
        for p in 0..n {
            if same(a, p) {
                group += 1;
            }
        }
        for t in 0..steps {
            // log-sum-exp over every (k, t'') except the anchor itself
            let mut max = f64::NEG_INFINITY;
            for k in 0..n {
                for t2 in 0..steps {
                    if k == a && t2 == t {
                        continue;
                    }
                    let s = dot(&z[a][t], &z[k][t2]) / tau;
                    if s > max {
                        max = s;
                    }
                }
            }
            let mut acc = 0.0;
            for k in 0..n {
                for t2 in 0..steps {
                    if k == a && t2 == t {
                        continue;
                    }
                    acc += (dot(&z[a][t], &z[k][t2]) / tau - max).exp();
                }
            }
            let lse = max + acc.ln();
            let mut anchor = 0.0;
            for p in 0..n {
                if !same(a, p) {
                    continue;
                }
                for t1 in 0..steps {
                    if p == a && t1 == t {
                        continue;
                    }
                    anchor += dot(&z[a][t], &z[p][t1]) / tau - lse;
                }
            }
            total -= anchor / group as f64;
        }
    }
    total / steps as f64
}

/// `(u_pre, spikes, u)` of a single LIF neuron starting from rest.
pub fn oracle_lif(inputs: &[f64], alpha: f64, v_th: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut u = 0.0;
    let (mut pre, mut spk, mut mem) = (Vec::new(), Vec::new(), Vec::new());
    for &x in inputs {
        let p = alpha * u + x;
        let fired = p >= v_th;
        u = if fired { 0.0 } else { p };
        pre.push(p);
        spk.push(if fired { 1.0 } else { 0.0 });
        mem.push(u);
    }
    (pre, spk, mem)
}

/// `-log softmax(logits)[label]`.
pub fn oracle_ce(logits: &[f64], label: usize) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for &v in logits {
        max = max.max(v);
    }
    let mut acc = 0.0;
    for &v in logits {
        acc += (v - max).exp();
    }
    max + acc.ln() - logits[label]
}

/// Batch-mean CE of the step-averaged logits; `logits[t][b][c]`.
pub fn oracle_bl(logits: &[Vec<Vec<f64>>], labels: &[usize]) -> f64 {
    let steps = logits.len();
    let mut total = 0.0;
    for b in 0..labels.len() {
        let classes = logits[0][b].len();
        let mut avg = vec![0.0; classes];
        for t in 0..steps {
            for c in 0..classes {
                avg[c] += logits[t][b][c];
            }
        }
        for v in avg.iter_mut() {
            *v /= steps as f64;
        }
        total += oracle_ce(&avg, labels[b]);
    }
    total / labels.len() as f64
}

/// Mean over steps of the batch-mean per-step CE.
pub fn oracle_tet(logits: &[Vec<Vec<f64>>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for step in logits {
        let mut s = 0.0;
        for b in 0..labels.len() {
            s += oracle_ce(&step[b], labels[b]);
        }
        total += s / labels.len() as f64;
    }
    total / logits.len() as f64
}

/// A single conv block (bias, no batchnorm) followed by LIF neurons, global
/// average pooling and a linear readout, evaluated sample by sample.
pub struct ConvBlockOracle {
    /// `[out][in][k][k]`
    pub weight: Vec<Vec<Vec<Vec<f64>>>>,
    pub bias: Vec<f64>,
    pub stride: usize,
    pub padding: usize,
    pub alpha: f64,
    pub v_th: f64,
    /// `[out][classes]`
    pub readout_weight: Vec<Vec<f64>>,
    pub readout_bias: Vec<f64>,
}

impl ConvBlockOracle {
    /// Per-step logits for one sample given as `frames[t][c][h][w]`.
    pub fn logits(&self, frames: &[Vec<Vec<Vec<f64>>>]) -> Vec<Vec<f64>> {
        let outc = self.weight.len();
        let k = self.weight[0][0].len();
        let inc = frames[0].len();
        let h = frames[0][0].len();
        let w = frames[0][0][0].len();
        let ho = (h + 2 * self.padding - k) / self.stride + 1;
        let wo = (w + 2 * self.padding - k) / self.stride + 1;
        let mut u = vec![vec![vec![0.0; wo]; ho]; outc];
        let mut out = Vec::new();
        for frame in frames {
            let mut pooled = vec![0.0; outc];
            for o in 0..outc {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = 0.0;
                        for c in 0..inc {
                            for di in 0..k {
                                for dj in 0..k {
                                    let y = (i * self.stride + di) as isize - self.padding as isize;
                                    let x = (j * self.stride + dj) as isize - self.padding as isize;
                                    if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                                        continue;
                                    }
                                    acc += self.weight[o][c][di][dj] * frame[c][y as usize][x as usize];
                                }
                            }
                        }
                        let drive = acc + self.bias[o];
                        let p = self.alpha * u[o][i][j] + drive;
                        if p >= self.v_th {
                            u[o][i][j] = 0.0;
                            pooled[o] += 1.0;
                        } else {
                            u[o][i][j] = p;
                        }
                    }
                }
                pooled[o] /= (ho * wo) as f64;
            }
            let classes = self.readout_bias.len();
            let mut logits = vec![0.0; classes];
            for c in 0..classes {
                let mut s = 0.0;
                for o in 0..outc {
                    s += pooled[o] * self.readout_weight[o][c];
                }
                logits[c] = s + self.readout_bias[c];
            }
            out.push(logits);
        }
        out
    }
}

/// Percentage of ones in a flat spike buffer.
pub fn oracle_firing_rate(spikes: &[f64]) -> f64 {
    let mut ones = 0.0;
    for &s in spikes {
        if s == 1.0 {
            ones += 1.0;
        }
    }
    100.0 * ones / spikes.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_forms() {
        let row = vec![0.6, 0.8];
        let z = vec![vec![row.clone(), row.clone()], vec![row.clone(), row]];
        let un = oracle_contrastive(&z, &[0, 1], 1, 0.07, false);
        assert!((un - 2.0 * 3f64.ln()).abs() < 1e-12);
        let sup = oracle_contrastive(&z, &[0, 0], 1, 0.07, true);
        assert!((sup - 3.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn lif_examples() {
        let (pre, spk, mem) = oracle_lif(&[0.6, 0.6, 0.6], 0.5, 1.0);
        assert_eq!(spk, vec![0.0, 0.0, 1.0]);
        assert!((pre[2] - 1.05).abs() < 1e-15);
        assert_eq!(mem[2], 0.0);
        let (_, spk, _) = oracle_lif(&[2.0; 4], 0.5, 1.0);
        assert_eq!(spk, vec![1.0; 4]);
        let (pre, spk, mem) = oracle_lif(&[0.0; 3], 0.5, 1.0);
        assert!(pre.iter().chain(&spk).chain(&mem).all(|&v| v == 0.0));
    }

    #[test]
    fn ce_examples() {
        assert!((oracle_ce(&[0.0; 5], 3) - 5f64.ln()).abs() < 1e-15);
        assert!((oracle_ce(&[1.0, 0.0], 0) - 0.313262).abs() < 1e-6);
        assert!(oracle_ce(&[1e6, 0.0, 0.0], 0).abs() < 1e-6);
    }

    #[test]
    fn bl_tet_alternating() {
        let logits = vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]];
        assert!((oracle_bl(&logits, &[0]) - 2f64.ln()).abs() < 1e-15);
        assert!((oracle_tet(&logits, &[0]) - 0.813262).abs() < 1e-6);
    }
}
