//! `analyze`: closed-form compression, speedup and SNR over a grid of ranks.

use std::io::{Read, Write};

use lowrank_core::analytics::{compression_ratio, hosvd_overhead_flops, snr, speedup_ratio, vanilla_forward_flops};
use lowrank_core::{LayerShape, RankTuple};

use crate::csvio::{format_float, parse_field};
use crate::error::{CliError, Result};

pub const ANALYZE_HEADER: [&str; 17] = [
    "B", "C", "Cp", "H", "W", "Hp", "Wp", "D", "K1", "K2", "K3", "K4", "R_C", "R_S", "SNR", "overhead_flops",
    "vanilla_flops",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyzeRow {
    pub shape: LayerShape,
    pub k: [usize; 4],
    pub r_c: f64,
    pub r_s: f64,
    pub snr: f64,
    pub overhead_flops: f64,
    pub vanilla_flops: f64,
}

/// Parses `B,C,Cp,H,W,Hp,Wp,D`.
pub fn parse_shape(s: &str) -> Result<LayerShape> {
    let v: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| CliError::Usage(format!("bad shape entry {p:?} in {s:?}"))))
        .collect::<Result<_>>()?;
    let [b, c, cp, h, w, hp, wp, d] = v[..] else {
        return Err(CliError::Usage(format!("shape needs 8 entries B,C,Cp,H,W,Hp,Wp,D, got {}", v.len())));
    };
    Ok(LayerShape::new(b, c, cp, h, w, hp, wp, d)?)
}

fn parse_range(spec: &str) -> Result<Vec<usize>> {
    let bad = || CliError::Usage(format!("bad rank range {spec:?}; expected n, a-b or a-b:step"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let (range, step) = match spec.split_once(':') {
        Some((r, st)) => (r, num(st)?),
        None => (spec, 1),
    };
    let (lo, hi) = match range.split_once('-') {
        Some((a, b)) => (num(a)?, num(b)?),
        None => {
            let n = num(range)?;
            (n, n)
        }
    };
    if step == 0 || lo > hi {
        return Err(bad());
    }
    Ok((lo..=hi).step_by(step).collect())
}

/// Parses a rank grid: four comma-separated per-mode ranges, each `n`,
/// `a-b` or `a-b:step`. The grid is their Cartesian product, K4 fastest.
pub fn parse_k_grid(spec: &str, shape: &LayerShape) -> Result<Vec<RankTuple>> {
    let parts: Vec<&str> = spec.split(',').collect();
    if parts.len() != 4 {
        return Err(CliError::Usage(format!("rank grid needs 4 comma-separated ranges, got {spec:?}")));
    }
    let axes: Vec<Vec<usize>> = parts.iter().map(|p| parse_range(p)).collect::<Result<_>>()?;
    let mut grid = Vec::with_capacity(axes.iter().map(Vec::len).product());
    for &k1 in &axes[0] {
        for &k2 in &axes[1] {
            for &k3 in &axes[2] {
                for &k4 in &axes[3] {
                    grid.push(RankTuple::new([k1, k2, k3, k4], shape)?);
                }
            }
        }
    }
    Ok(grid)
}

pub fn analyze(shape: &LayerShape, grid: &[RankTuple], epsilon: f64) -> Result<Vec<AnalyzeRow>> {
    let snr = snr(epsilon)?;
    let (overhead_flops, vanilla_flops) = (hosvd_overhead_flops(shape), vanilla_forward_flops(shape));
    Ok(grid
        .iter()
        .map(|k| AnalyzeRow {
            shape: *shape,
            k: k.0,
            r_c: compression_ratio(shape, k),
            r_s: speedup_ratio(shape, k),
            snr,
            overhead_flops,
            vanilla_flops,
        })
        .collect())
}

pub fn write_analyze_csv<W: Write>(rows: &[AnalyzeRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ANALYZE_HEADER)?;
    for r in rows {
        let s = r.shape;
        let mut rec: Vec<String> =
            [s.b, s.c, s.c_out, s.h, s.w, s.h_out, s.w_out, s.d].iter().chain(&r.k).map(|v| v.to_string()).collect();
        rec.extend([r.r_c, r.r_s, r.snr, r.overhead_flops, r.vanilla_flops].map(format_float));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CliError::io("writing analyze CSV", e))?;
    Ok(())
}

pub fn read_analyze_csv<R: Read>(input: R) -> Result<Vec<AnalyzeRow>> {
    let mut rd = csv::Reader::from_reader(input);
    crate::csvio::check_header(rd.headers()?, &ANALYZE_HEADER)?;
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let u = |i: usize| parse_field::<usize>(&rec, i);
        let f = |i: usize| parse_field::<f64>(&rec, i);
        let shape = LayerShape::new(u(0)?, u(1)?, u(2)?, u(3)?, u(4)?, u(5)?, u(6)?, u(7)?)?;
        rows.push(AnalyzeRow {
            shape,
            k: [u(8)?, u(9)?, u(10)?, u(11)?],
            r_c: f(12)?,
            r_s: f(13)?,
            snr: f(14)?,
            overhead_flops: f(15)?,
            vanilla_flops: f(16)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_syntax() {
        let s = parse_shape("8,4,4,8,8,8,8,3").unwrap();
        let g = parse_k_grid("1-8:3,2,1-2,8", &s).unwrap();
        assert_eq!(g.len(), 3 * 1 * 2 * 1);
        assert_eq!(g[0].0, [1, 2, 1, 8]);
        assert_eq!(g[5].0, [7, 2, 2, 8]);
        assert!(parse_k_grid("1,1,1", &s).is_err());
        assert!(parse_k_grid("9,1,1,1", &s).is_err());
        assert!(parse_k_grid("3-1,1,1,1", &s).is_err());
        assert!(parse_k_grid("1-3:0,1,1,1", &s).is_err());
        assert!(parse_shape("1,2,3").is_err());
        assert!(parse_shape("1,2,3,4,5,6,7,x").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = parse_shape("8,4,4,8,8,8,8,3").unwrap();
        let rows = analyze(&s, &parse_k_grid("1-8,1-4,2,2", &s).unwrap(), 0.8).unwrap();
        let mut buf = Vec::new();
        write_analyze_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_analyze_csv(&buf[..]).unwrap(), rows);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("B,C,Cp,H,W,Hp,Wp,D,K1,K2,K3,K4,R_C,R_S,SNR,overhead_flops,vanilla_flops\n"));
        assert_eq!(text.lines().count(), 1 + 32);
    }
}
