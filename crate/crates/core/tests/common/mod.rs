//! Test-only reference implementations.

#![allow(dead_code)]

use holdsim::oracles::SmallInstance;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite input")
}

/// `max c.y` subject to `A y <= b`, `y >= 0`, with `b >= 0`, solved by the
/// tableau simplex method in exact arithmetic with Bland's rule.
pub fn simplex_max(a: &[Vec<BigRational>], b: &[BigRational], c: &[BigRational]) -> BigRational {
    let m = a.len();
    let n = c.len();
    let width = n + m + 1;
    let mut tab: Vec<Vec<BigRational>> = (0..m)
        .map(|i| {
            let mut row = vec![BigRational::zero(); width];
            row[..n].clone_from_slice(&a[i]);
            row[n + i] = BigRational::one();
            row[width - 1] = b[i].clone();
            row
        })
        .collect();
    // objective row holds reduced costs; the last entry is minus the value
    let mut obj = vec![BigRational::zero(); width];
    obj[..n].clone_from_slice(c);
    let mut basis: Vec<usize> = (n..n + m).collect();

    while let Some(enter) = (0..n + m).find(|&k| obj[k].is_positive()) {
        let mut leave: Option<usize> = None;
        for i in 0..m {
            if !tab[i][enter].is_positive() {
                continue;
            }
            let ratio = &tab[i][width - 1] / &tab[i][enter];
            leave = match leave {
                None => Some(i),
                Some(r) => {
                    let best = &tab[r][width - 1] / &tab[r][enter];
                    if ratio < best || (ratio == best && basis[i] < basis[r]) {
                        Some(i)
                    } else {
                        Some(r)
                    }
                }
            };
        }
        let r = leave.expect("feasible region is bounded");
        let pivot = tab[r][enter].clone();
        for v in tab[r].iter_mut() {
            *v = &*v / &pivot;
        }
        let pivot_row = tab[r].clone();
        for (i, row) in tab.iter_mut().enumerate() {
            if i != r && !row[enter].is_zero() {
                let factor = row[enter].clone();
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v = &*v - &factor * p;
                }
            }
        }
        let factor = obj[enter].clone();
        for (v, p) in obj.iter_mut().zip(&pivot_row) {
            *v = &*v - &factor * p;
        }
        basis[r] = enter;
    }
    -obj[width - 1].clone()
}

/// Fluid LP of a small instance, solved exactly.
pub fn exact_lp(inst: &SmallInstance) -> BigRational {
    let vars: Vec<(usize, usize)> = inst
        .patrons
        .iter()
        .enumerate()
        .flat_map(|(j, p)| p.compatible.iter().map(move |&a| (j, a)))
        .collect();
    let classes = inst.capacities.len();
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    let horizon = BigRational::from_integer(BigInt::from(inst.horizon));
    for (j, p) in inst.patrons.iter().enumerate() {
        rows.push(vars.iter().map(|&(q, _)| if q == j { BigRational::one() } else { BigRational::zero() }).collect());
        rhs.push(&horizon * exact(p.rate));
    }
    for a in 0..classes {
        rows.push(vars.iter().map(|&(_, b)| if b == a { BigRational::one() } else { BigRational::zero() }).collect());
        rhs.push(BigRational::from_integer(BigInt::from(inst.capacities[a])));
    }
    let c: Vec<BigRational> = vars.iter().map(|&(j, _)| exact(inst.patrons[j].reward)).collect();
    simplex_max(&rows, &rhs, &c)
}

pub fn to_f64(x: &BigRational) -> f64 {
    x.to_f64().expect("representable")
}
