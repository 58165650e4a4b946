//! Versioned TSV dump of [`ModelParams`].
//!
//! ```text
//! mhgcn-checkpoint  1
//! layers L  dim D  features M  relations R  classes K  fusion mean|last_layer  normalization none|row
//! beta  b_1 ... b_R
//! W1  M  D
//! <M rows of D values>
//! W2  D  D
//! ...
//! C  K  D            (only when K > 0)
//! <K rows>
//! ```
//!
//! Values are written with the shortest decimal form that parses back to
//! the identical `f64`, so a save/load round trip is exact.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::DenseMatrix;
use crate::model::{Fusion, ModelParams, Normalization};

const MAGIC: &str = "mhgcn-checkpoint";
const VERSION: u32 = 1;

fn write_matrix(out: &mut String, name: &str, m: &DenseMatrix) {
    let _ = writeln!(out, "{name}\t{}\t{}", m.nrows(), m.ncols());
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join("\t"));
        out.push('\n');
    }
}

pub fn to_string(params: &ModelParams) -> String {
    let mut out = format!("{MAGIC}\t{VERSION}\n");
    let _ = writeln!(
        out,
        "layers\t{}\tdim\t{}\tfeatures\t{}\trelations\t{}\tclasses\t{}\tfusion\t{}\tnormalization\t{}",
        params.layers(),
        params.dim(),
        params.feature_dim(),
        params.num_relations(),
        params.num_classes().unwrap_or(0),
        params.fusion.as_str(),
        params.normalization.as_str()
    );
    let beta: Vec<String> = params.beta.iter().map(|b| b.to_string()).collect();
    let _ = writeln!(out, "beta\t{}", beta.join("\t"));
    for (i, w) in params.weights.iter().enumerate() {
        write_matrix(&mut out, &format!("W{}", i + 1), w);
    }
    if let Some(c) = &params.classifier {
        write_matrix(&mut out, "C", c);
    }
    out
}

struct Reader<'a> {
    lines: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Reader<'a> {
    fn next(&mut self) -> Result<Vec<&'a str>> {
        let (i, l) = self.lines.next().ok_or(Error::Checkpoint {
            line: self.line + 1,
            message: "unexpected end of file".into(),
        })?;
        self.line = i + 1;
        Ok(l.split('\t').collect())
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::Checkpoint {
            line: self.line,
            message: message.into(),
        }
    }

    fn num<T: std::str::FromStr>(&self, s: &str) -> Result<T> {
        s.parse().map_err(|_| self.err(format!("cannot parse `{s}`")))
    }

    fn matrix(&mut self, name: &str, rows: usize, cols: usize) -> Result<DenseMatrix> {
        let head = self.next()?;
        if head.len() != 3 || head[0] != name {
            return Err(self.err(format!("expected `{name} {rows} {cols}` header")));
        }
        let (r, c): (usize, usize) = (self.num(head[1])?, self.num(head[2])?);
        if (r, c) != (rows, cols) {
            return Err(self.err(format!("{name} is {r}x{c}, expected {rows}x{cols}")));
        }
        let mut m = DenseMatrix::zeros((rows, cols));
        for i in 0..rows {
            let fields = self.next()?;
            if fields.len() != cols {
                return Err(self.err(format!("expected {cols} values, found {}", fields.len())));
            }
            for (j, f) in fields.iter().enumerate() {
                m[[i, j]] = self.num(f)?;
            }
        }
        Ok(m)
    }
}

pub fn from_str(text: &str) -> Result<ModelParams> {
    let mut rd = Reader {
        lines: text.lines().enumerate(),
        line: 0,
    };
    let magic = rd.next()?;
    if magic.len() != 2 || magic[0] != MAGIC {
        return Err(rd.err("not a checkpoint file"));
    }
    let version: u32 = rd.num(magic[1])?;
    if version != VERSION {
        return Err(rd.err(format!("unsupported checkpoint version {version}")));
    }

    let header = rd.next()?;
    let keys = ["layers", "dim", "features", "relations", "classes", "fusion", "normalization"];
    if header.len() != 14 || header.chunks(2).zip(keys).any(|(pair, k)| pair[0] != k) {
        return Err(rd.err("malformed header"));
    }
    let layers: usize = rd.num(header[1])?;
    let dim: usize = rd.num(header[3])?;
    let features: usize = rd.num(header[5])?;
    let relations: usize = rd.num(header[7])?;
    let classes: usize = rd.num(header[9])?;
    let fusion: Fusion = header[11].parse().map_err(|_| rd.err("unknown fusion"))?;
    let normalization: Normalization = header[13].parse().map_err(|_| rd.err("unknown normalization"))?;
    if layers == 0 {
        return Err(rd.err("zero layers"));
    }

    let beta_line = rd.next()?;
    if beta_line[0] != "beta" || beta_line.len() != relations + 1 {
        return Err(rd.err(format!("expected `beta` with {relations} values")));
    }
    let beta = beta_line[1..].iter().map(|s| rd.num(s)).collect::<Result<Vec<f64>>>()?;

    let mut weights = Vec::with_capacity(layers);
    for i in 0..layers {
        let rows = if i == 0 { features } else { dim };
        weights.push(rd.matrix(&format!("W{}", i + 1), rows, dim)?);
    }
    let classifier = if classes > 0 {
        Some(rd.matrix("C", classes, dim)?)
    } else {
        None
    };
    let params = ModelParams {
        beta,
        weights,
        classifier,
        fusion,
        normalization,
    };
    params.validate()?;
    Ok(params)
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, to_string(params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<ModelParams> {
    from_str(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #[test]
        fn round_trip_is_exact(
            seed in any::<u64>(),
            layers in 1usize..4,
            classes in proptest::option::of(1usize..5),
            last in any::<bool>(),
            row in any::<bool>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let fusion = if last { Fusion::LastLayer } else { Fusion::Mean };
            let mut p = ModelParams::init(3, 4, 5, layers, classes, fusion, &mut rng).unwrap();
            p.beta = vec![1.0 / 3.0, -2.5e-300, 7.0e12];
            if row {
                p.normalization = Normalization::Row;
            }
            let back = from_str(&to_string(&p)).unwrap();
            prop_assert_eq!(back, p);
        }
    }

    #[test]
    fn truncated_file_names_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = ModelParams::init(2, 3, 2, 2, None, Fusion::Mean, &mut rng).unwrap();
        let text = to_string(&p);
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(from_str(&cut), Err(Error::Checkpoint { line: 6, .. })));
        assert!(from_str("hello\n").is_err());
    }
}
