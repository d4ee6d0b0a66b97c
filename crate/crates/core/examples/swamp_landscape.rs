//! NSE landscape of CP-ALS over starting points on a 4×4×4 Vandermonde
//! tensor, showing the low-error basins and a swamp trajectory.
//!
//! `cargo run --release --example swamp_landscape [grid] [iters] [csv]`

use std::f64::consts::FRAC_PI_2;

use anyhow::Result;
use cpals::als::{cpals_traced, AlsConfig};
use cpals::cp::{vandermonde, CpFactors};

const Z1: [f64; 2] = [0.36, 0.18];
const Z2: [f64; 2] = [1.10, -0.70];
const Z3: [f64; 2] = [-0.58, 0.89];
const Z2_START: [f64; 2] = [-0.46, -0.85];
const LOW_NSE: f64 = 1e-6;

fn final_nse(y: &cpals::tensor::ComplexDenseTensor, z3_start: [f64; 2], iters: usize) -> Result<(f64, Vec<f64>)> {
    let init = [vandermonde(&Z2_START, 4), vandermonde(&z3_start, 4)];
    let (_, trace) = cpals_traced(y, &init, &AlsConfig::new(2, iters), Some(y))?;
    let nse = trace.nse.expect("truth given");
    Ok((*nse.last().expect("nonempty trace"), nse))
}

/// 4-connected components of the cells below `LOW_NSE`.
fn basins(grid: &[Vec<f64>]) -> Vec<Vec<(usize, usize)>> {
    let n = grid.len();
    let mut seen = vec![vec![false; n]; n];
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if seen[i][j] || grid[i][j] >= LOW_NSE {
                continue;
            }
            let mut comp = Vec::new();
            let mut stack = vec![(i, j)];
            seen[i][j] = true;
            while let Some((a, b)) = stack.pop() {
                comp.push((a, b));
                let nbrs = [(a.wrapping_sub(1), b), (a + 1, b), (a, b.wrapping_sub(1)), (a, b + 1)];
                for (x, y) in nbrs {
                    if x < n && y < n && !seen[x][y] && grid[x][y] < LOW_NSE {
                        seen[x][y] = true;
                        stack.push((x, y));
                    }
                }
            }
            out.push(comp);
        }
    }
    out
}

fn main() -> Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).map(|s| s.parse()).transpose()?.unwrap_or(64);
    let iters: usize = args.get(2).map(|s| s.parse()).transpose()?.unwrap_or(50);

    let y = CpFactors::unweighted(vec![vandermonde(&Z1, 4), vandermonde(&Z2, 4), vandermonde(&Z3, 4)])?.reconstruct()?;

    for (name, start) in [("truth", Z3), ("permuted truth", [Z3[1], Z3[0]])] {
        let (_, curve) = final_nse(&y, start, 10)?;
        println!("{name:>15} start: NSE after 10 iterations = {:.3e}", curve[10]);
    }

    let h = 2.0 * FRAC_PI_2 / n as f64;
    let centre = |k: usize| -FRAC_PI_2 + (k as f64 + 0.5) * h;
    let mut grid = vec![vec![0.0; n]; n];
    for (i, row) in grid.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = final_nse(&y, [centre(i), centre(j)], iters).map_or(f64::INFINITY, |r| r.0);
        }
    }
    if let Some(path) = args.get(3) {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["z31", "z32", "nse"])?;
        for (i, row) in grid.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                w.write_record([centre(i).to_string(), centre(j).to_string(), v.to_string()])?;
            }
        }
        w.flush()?;
    }

    let regions = basins(&grid);
    println!("{} low-NSE basins (NSE < {LOW_NSE:.0e} after {iters} iterations on a {n}x{n} grid):", regions.len());
    for comp in &regions {
        let (si, sj) = comp.iter().fold((0.0, 0.0), |acc, &(i, j)| (acc.0 + centre(i), acc.1 + centre(j)));
        let k = comp.len() as f64;
        println!("  {:>5} cells around ({:+.2}, {:+.2})", comp.len(), si / k, sj / k);
    }

    // slowest-converging start on the grid that still ends below 1e-2
    let (mut worst, mut at) = (0.0, (0, 0));
    for (i, row) in grid.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if v >= LOW_NSE && v < 1e-2 && v > worst {
                worst = v;
                at = (i, j);
            }
        }
    }
    if worst > 0.0 {
        let (_, curve) = final_nse(&y, [centre(at.0), centre(at.1)], iters)?;
        println!(
            "swamp start ({:+.2}, {:+.2}): NSE {:.2e} / {:.2e} / {:.2e} at iterations 1 / {} / {iters}",
            centre(at.0),
            centre(at.1),
            curve[1],
            curve[iters / 2],
            curve[iters],
            iters / 2
        );
    }
    Ok(())
}
