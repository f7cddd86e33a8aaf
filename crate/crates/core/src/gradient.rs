//! Analytic gradient of the total log-likelihood by scaled forward–backward.
//!
//! Transition derivatives are accumulated as expected transition weights per
//! covariate profile and chained through the monomial transition terms; the
//! softmax part reduces to observed-minus-expected register and pair counts.

use rayon::prelude::*;

use crate::data::Individual;
use crate::emission::{pair_count, pair_index, EmissionTerm};
use crate::likelihood::{chunk_size, posterior_from_logliks, Likelihood, Scratch};
use crate::model::ModelTables;
use crate::params::ModelParams;
use crate::scalar::pairwise_sum;
use crate::state_space::LifeEvent;

/// Sufficient statistics of the gradient, additive over records.
#[derive(Debug, Clone)]
struct Accumulator {
    /// `[slot][from][to]` expected transition weight divided by the transition probability.
    trans: Vec<f64>,
    /// `[slot][group][register]` posterior-weighted observed register counts.
    reg: Vec<f64>,
    /// `[slot][group][pair]`
    pair: Vec<f64>,
    /// `[slot][group]` posterior weight on softmax emissions.
    wtot: Vec<f64>,
    fp_pos: Vec<f64>,
    fp_neg: Vec<f64>,
    mix: Vec<f64>,
}

struct Dims {
    s: usize,
    g: usize,
    k: usize,
    np: usize,
}

impl Accumulator {
    fn new(slots: usize, d: &Dims) -> Self {
        Self {
            trans: vec![0.0; slots * d.s * d.s],
            reg: vec![0.0; slots * d.g * d.k],
            pair: vec![0.0; slots * d.g * d.np],
            wtot: vec![0.0; slots * d.g],
            fp_pos: vec![0.0; slots],
            fp_neg: vec![0.0; slots],
            mix: vec![0.0; d.g],
        }
    }

    fn add(&mut self, o: &Self) {
        for (a, b) in [
            (&mut self.trans, &o.trans),
            (&mut self.reg, &o.reg),
            (&mut self.pair, &o.pair),
            (&mut self.wtot, &o.wtot),
            (&mut self.fp_pos, &o.fp_pos),
            (&mut self.fp_neg, &o.fp_neg),
            (&mut self.mix, &o.mix),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

/// Forward–backward buffers for one group of one individual.
struct Pass {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    emit: Vec<f64>,
    scale: Vec<f64>,
}

impl Likelihood<'_> {
    /// Total weighted log-likelihood and its gradient in [`ModelParams`] shape.
    pub fn loglik_and_gradient(&self, params: &ModelParams<f64>, weights: Option<&[f64]>) -> (f64, ModelParams<f64>) {
        let tables = self.tables(params);
        let d = Dims {
            s: self.model.states.len(),
            g: self.model.groups(),
            k: self.model.registers(),
            np: if self.model.emission.pairs { pair_count(self.model.registers()) } else { 0 },
        };
        let n = self.data.len();
        let slots = self.data.profiles.len();
        let idx: Vec<usize> = (0..n).collect();
        let parts: Vec<(Vec<f64>, Accumulator)> = idx
            .par_chunks(chunk_size(n))
            .map(|chunk| {
                let mut acc = Accumulator::new(slots, &d);
                let mut lls = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let w = weights.map_or(1.0, |w| w[i]);
                    if w == 0.0 {
                        continue;
                    }
                    lls.push(w * self.accumulate(&tables, &self.data.individuals[i], w, &d, &mut acc));
                }
                (lls, acc)
            })
            .collect();
        let mut acc = Accumulator::new(slots, &d);
        let mut lls = Vec::with_capacity(n);
        for (l, a) in &parts {
            lls.extend_from_slice(l);
            acc.add(a);
        }
        let ll = pairwise_sum(&lls);
        if !ll.is_finite() {
            return (ll, ModelParams::zeros(self.model));
        }
        (ll, self.finish(params, &tables, &acc, &d))
    }

    /// Adds one individual's weighted contribution; returns its mixture log-likelihood.
    fn accumulate(&self, tables: &ModelTables<f64>, ind: &Individual, w: f64, d: &Dims, acc: &mut Accumulator) -> f64 {
        let mut sc = Scratch::new(d.s);
        let passes: Vec<Pass> = (0..d.g).map(|g| self.forward_pass(tables, ind, g, &mut sc)).collect();
        let group_ll: Vec<f64> = passes.iter().map(|p| p.scale.iter().map(|c| c.ln()).sum()).collect();
        let omega = match posterior_from_logliks(&tables.log_pi, &group_ll) {
            Ok(o) => o,
            Err(_) => return f64::NEG_INFINITY,
        };
        let total = crate::likelihood::mix(&tables.log_pi, &group_ll);
        for (g, mut pass) in passes.into_iter().enumerate() {
            let v = w * omega[g];
            acc.mix[g] += w * (omega[g] - tables.pi[g]);
            if v == 0.0 {
                continue;
            }
            self.backward_and_add(tables, ind, g, v, &mut pass, d, acc);
        }
        total
    }

    fn forward_pass(&self, tables: &ModelTables<f64>, ind: &Individual, group: usize, sc: &mut Scratch<f64>) -> Pass {
        let s = self.model.states.len();
        let len = ind.len();
        let mut pass = Pass {
            alpha: vec![0.0; len * s],
            beta: vec![0.0; len * s],
            emit: vec![0.0; len * s],
            scale: vec![1.0; len],
        };
        let present = self.model.states.present_state();
        for t in 0..len {
            self.emit(tables, ind, t, group, sc);
            pass.emit[t * s..(t + 1) * s].copy_from_slice(&sc.emit);
            if t == 0 {
                sc.next.iter_mut().for_each(|x| *x = 0.0);
                sc.next[present] = sc.emit[present];
            } else {
                let gamma = &tables.profiles[ind.slots[t - 1] as usize].transition;
                let prev = &pass.alpha[(t - 1) * s..t * s];
                for j in 0..s {
                    let mut a = 0.0;
                    for &i in &self.incoming[j] {
                        a += prev[i] * gamma.get(i, j);
                    }
                    sc.next[j] = a * sc.emit[j];
                }
            }
            let c: f64 = sc.next.iter().sum();
            if !(c > 0.0) {
                pass.scale[t] = 0.0;
                return pass;
            }
            pass.scale[t] = c;
            for j in 0..s {
                pass.alpha[t * s + j] = sc.next[j] / c;
            }
        }
        pass
    }

    #[allow(clippy::too_many_arguments)]
    fn backward_and_add(
        &self,
        tables: &ModelTables<f64>,
        ind: &Individual,
        g: usize,
        v: f64,
        pass: &mut Pass,
        d: &Dims,
        acc: &mut Accumulator,
    ) {
        let s = d.s;
        let len = ind.len();
        for j in 0..s {
            pass.beta[(len - 1) * s + j] = 1.0;
        }
        for t in (0..len.saturating_sub(1)).rev() {
            let gamma = &tables.profiles[ind.slots[t] as usize].transition;
            let c = pass.scale[t + 1];
            let slot = ind.slots[t] as usize;
            for i in 0..s {
                let a = pass.alpha[t * s + i];
                let mut b = 0.0;
                for &j in &self.outgoing[i] {
                    let eb = pass.emit[(t + 1) * s + j] * pass.beta[(t + 1) * s + j] / c;
                    b += gamma.get(i, j) * eb;
                    if a != 0.0 {
                        acc.trans[(slot * s + i) * s + j] += v * a * eb;
                    }
                }
                pass.beta[t * s + i] = b;
            }
        }
        let mut local = Vec::new();
        for t in 0..len {
            let slot = ind.slots[t] as usize;
            let mut pattern_w = 0.0;
            let terms = self.terms.get(self.model, ind.obs[t], &mut local);
            for (st, term) in terms.iter().enumerate() {
                let gamma_t = pass.alpha[t * s + st] * pass.beta[t * s + st];
                if gamma_t == 0.0 {
                    continue;
                }
                match term {
                    EmissionTerm::Pattern(_) => pattern_w += gamma_t,
                    EmissionTerm::FalsePositive(_) => acc.fp_pos[slot] += v * gamma_t,
                    EmissionTerm::NotFalsePositive(_) => acc.fp_neg[slot] += v * gamma_t,
                    EmissionTerm::Fixed(_) | EmissionTerm::Zero => {}
                }
            }
            if pattern_w == 0.0 {
                continue;
            }
            let wv = v * pattern_w;
            let sg = slot * d.g + g;
            acc.wtot[sg] += wv;
            let m = ind.obs[t].pattern;
            let mut bits = m;
            while bits != 0 {
                let kk = bits.trailing_zeros() as usize;
                acc.reg[sg * d.k + kk] += wv;
                if d.np > 0 {
                    let mut rest = bits & (bits - 1);
                    while rest != 0 {
                        let l = rest.trailing_zeros() as usize;
                        acc.pair[sg * d.np + pair_index(kk, l, d.k)] += wv;
                        rest &= rest - 1;
                    }
                }
                bits &= bits - 1;
            }
        }
    }

    fn finish(&self, params: &ModelParams<f64>, tables: &ModelTables<f64>, acc: &Accumulator, d: &Dims) -> ModelParams<f64> {
        let model = self.model;
        let scheme = &model.scheme;
        let all = scheme.all_dims();
        let mut grad = ModelParams::<f64>::zeros(model);
        let s = d.s;
        for (slot, profile) in self.data.profiles.iter().enumerate() {
            let pt = &tables.profiles[slot];
            let active = scheme.active_effects(&all, profile);
            // life events
            let mut dprob = [0.0; 4];
            for term in &model.states.transitions {
                let m = acc.trans[(slot * s + term.from) * s + term.to];
                if m == 0.0 {
                    continue;
                }
                for ev in LifeEvent::ALL {
                    dprob[ev.index()] += m * term.derivative(&pt.events, ev);
                }
            }
            for ev in LifeEvent::ALL {
                let p = pt.events[ev.index()];
                let de = dprob[ev.index()] * p * (1.0 - p);
                let lp = &mut grad.life[ev.index()];
                lp.intercept += de;
                for &a in &active {
                    lp.effects[a] += de;
                }
            }
            // false positives
            let dq = acc.fp_pos[slot] * (1.0 - pt.q) - acc.fp_neg[slot] * pt.q;
            grad.false_positive.intercept += dq;
            for &a in &active {
                grad.false_positive.effects[a] += dq;
            }
            // softmax
            let em_active = scheme.active_effects(&model.emission.interaction_dims, profile);
            for g in 0..d.g {
                let sg = slot * d.g + g;
                let wt = acc.wtot[sg];
                if wt == 0.0 {
                    continue;
                }
                let (ek, epair) = pattern_moments(&pt.patterns[g], d.k, d.np);
                for k in 0..d.k {
                    let da = acc.reg[sg * d.k + k] - wt * ek[k];
                    grad.emission.main[g][k] += da;
                    for &a in &em_active {
                        grad.emission.register_effects[g][k][a] += da;
                    }
                }
                for p in 0..d.np {
                    grad.emission.pairs[p] += acc.pair[sg * d.np + p] - wt * epair[p];
                }
            }
        }
        for h in 0..d.g - 1 {
            grad.mixing_logits[h] = acc.mix[h];
        }
        let _ = params;
        grad
    }
}

/// `E[bit_k]` and `E[bit_k bit_l]` under a pattern distribution.
fn pattern_moments(probs: &[f64], k: usize, np: usize) -> (Vec<f64>, Vec<f64>) {
    let mut ek = vec![0.0; k];
    let mut ep = vec![0.0; np];
    for (m, &p) in probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let mut bits = m as u32;
        while bits != 0 {
            let a = bits.trailing_zeros() as usize;
            ek[a] += p;
            if np > 0 {
                let mut rest = bits & (bits - 1);
                while rest != 0 {
                    let b = rest.trailing_zeros() as usize;
                    ep[pair_index(a, b, k)] += p;
                    rest &= rest - 1;
                }
            }
            bits &= bits - 1;
        }
    }
    (ek, ep)
}
