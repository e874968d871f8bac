//! Average support × query similarity and its image export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use taskrel_core::episode::{episode_graphs, sample_episode, stream_rng, Dataset, EpisodeSpec};
use taskrel_core::gnn::EpisodeModel;
use taskrel_core::tensor::Tensor;

use crate::error::{io_at, CliError, Result};

/// Mean last-layer similarity between every support item (rows) and every
/// query (columns) over episodes drawn from streams `0..episodes` of `seed`.
///
/// Both axes are class-major, so a perfect model shows `n_way` diagonal blocks.
pub fn support_query_average<M: EpisodeModel + ?Sized>(
    model: &M,
    dataset: &Dataset,
    spec: &EpisodeSpec,
    episodes: usize,
    seed: u64,
) -> Result<Tensor> {
    spec.validate()?;
    if episodes == 0 {
        return Err(CliError::Usage("heatmap needs at least one episode".into()));
    }
    let (rows, cols) = (spec.support_len(), spec.query_len());
    let blocks: Vec<Vec<f64>> = (0..episodes)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let episode = sample_episode(dataset, spec, &mut stream_rng(seed, i as u64))?;
            let layouts = episode_graphs(&episode);
            let sims = model.final_similarities(&episode)?;
            let mut block = vec![0.0; rows * cols];
            for (layout, s) in layouts.iter().zip(&sims) {
                for (pos, &q) in layout.query_positions().zip(&layout.queries) {
                    for r in 0..rows {
                        block[r * cols + q] = s.values.at(r, pos);
                    }
                }
            }
            Ok(block)
        })
        .collect::<Result<_>>()?;

    let mut sum = vec![0.0; rows * cols];
    for block in &blocks {
        for (acc, x) in sum.iter_mut().zip(block) {
            *acc += x;
        }
    }
    let n = episodes as f64;
    Ok(Tensor::new(
        vec![rows, cols],
        sum.into_iter().map(|x| x / n).collect(),
    )?)
}

/// Header `support,q0,q1,…`, then one `s<r>` row per support item.
pub fn write_csv(matrix: &Tensor, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_at(path))?;
    let mut w = BufWriter::new(file);
    let mut text = String::from("support");
    for q in 0..matrix.cols() {
        text.push_str(&format!(",q{q}"));
    }
    text.push('\n');
    for r in 0..matrix.rows() {
        text.push_str(&format!("s{r}"));
        for x in matrix.row(r) {
            text.push_str(&format!(",{x}"));
        }
        text.push('\n');
    }
    w.write_all(text.as_bytes()).map_err(io_at(path))?;
    w.flush().map_err(io_at(path))
}

/// 8-bit grayscale bytes, `round(255·s)` clamped to `0..=255`.
pub fn gray_levels(matrix: &Tensor) -> Vec<u8> {
    matrix
        .data()
        .iter()
        .map(|&s| (255.0 * s).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Binary PGM, width = columns, height = rows.
pub fn write_pgm(matrix: &Tensor, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(io_at(path))?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{} {}\n255\n", matrix.cols(), matrix.rows()).map_err(io_at(path))?;
    w.write_all(&gray_levels(matrix)).map_err(io_at(path))?;
    w.flush().map_err(io_at(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use taskrel_core::episode::make_synthetic_dataset;
    use taskrel_core::gnn::{OracleSimilarity, EDGE_EPSILON};

    #[test]
    fn oracle_gives_block_diagonal_in_both_modes() {
        let ds = make_synthetic_dataset(8, 12, 3, 2.0, 0.5, 1).unwrap();
        for transductive in [true, false] {
            let mut spec = EpisodeSpec::new(3, 2, 2);
            spec.transductive = transductive;
            let m = support_query_average(&OracleSimilarity, &ds, &spec, 7, 5).unwrap();
            assert_eq!(m.shape(), &[6, 6]);
            for r in 0..6 {
                for q in 0..6 {
                    let expected = if r / 2 == q / 2 { 1.0 } else { EDGE_EPSILON };
                    assert!((m.at(r, q) - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gray_levels_round_and_clamp() {
        let m = Tensor::vector(vec![0.0, 0.5, 1.0, 0.002, 1.3, -0.1]);
        assert_eq!(gray_levels(&m), vec![0, 128, 255, 1, 255, 0]);
    }

    #[test]
    fn pgm_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.pgm");
        let m = Tensor::from_rows(&[[0.0, 1.0, 0.5], [1.0, 0.0, 0.25]]).unwrap();
        write_pgm(&m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(&bytes[11..], &[0, 255, 128, 255, 0, 64]);
    }
}
