//! Minimal CSV emission. Floats use Rust's shortest-roundtrip formatting,
//! so identical numbers always yield identical bytes — the manifests hash
//! these files.

use fplab_core::field::ScalarField;
use fplab_core::solver::Solution;

pub fn csv_bytes(header: &[&str], rows: &[Vec<f64>]) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in rows {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&format_cell(*v));
            first = false;
        }
        out.push('\n');
    }
    out.into_bytes()
}

fn format_cell(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

/// Node index, coordinates, value.
pub fn field_csv(f: &ScalarField) -> Vec<u8> {
    let grid = f.grid();
    let d = grid.dim();
    let mut header = vec!["node"];
    header.extend(["x0", "x1", "x2"].iter().take(d));
    header.push("value");
    let rows: Vec<Vec<f64>> = f
        .values()
        .iter()
        .enumerate()
        .map(|(idx, v)| {
            let x = grid.coords(idx);
            let mut row = vec![idx as f64];
            row.extend(&x[..d]);
            row.push(*v);
            row
        })
        .collect();
    csv_bytes(&header, &rows)
}

/// Per-step diagnostics of a run: time, mass, every recorded norm, squared
/// gradient norm, minimum value, linear-solver iterations.
pub fn diagnostics_csv(sol: &Solution) -> Vec<u8> {
    let mut header = vec!["step".to_string(), "time".to_string(), "mass".to_string()];
    for q in sol.q_list() {
        if q.is_infinite() {
            header.push("linf".to_string());
        } else {
            header.push(format!("l{q}"));
        }
    }
    header.push("grad_sq".to_string());
    header.push("min_u".to_string());
    header.push("lin_iters".to_string());
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();

    let times = sol.step_times();
    let mut rows = Vec::with_capacity(times.len());
    for (k, t) in times.iter().enumerate() {
        let mut row = vec![k as f64, *t, sol.masses()[k]];
        for q in sol.q_list() {
            row.push(sol.lq_series(*q).expect("recorded q")[k]);
        }
        row.push(sol.grad_sq_series()[k]);
        row.push(sol.min_series()[k]);
        row.push(if k == 0 {
            0.0
        } else {
            sol.iterations()[k - 1] as f64
        });
        rows.push(row);
    }
    csv_bytes(&header_refs, &rows)
}
