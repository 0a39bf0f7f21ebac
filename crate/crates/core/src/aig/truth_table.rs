use crate::error::{Error, Result};

/// Output columns over all `2^n_in` input rows. Row `r` assigns bit `i` of
/// `r` to input `i`. Columns are packed 64 rows per word, row 0 in bit 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TruthTable {
    n_in: usize,
    columns: Vec<Vec<u64>>,
}

impl TruthTable {
    pub(crate) fn from_words(n_in: usize, columns: Vec<Vec<u64>>) -> Self {
        TruthTable { n_in, columns }
    }

    pub fn from_bits(n_in: usize, columns: Vec<Vec<bool>>) -> Result<Self> {
        let rows = 1usize << n_in;
        let mut out = Vec::with_capacity(columns.len());
        for col in columns {
            if col.len() != rows {
                return Err(Error::SizeMismatch {
                    what: "truth table column length",
                    expected: rows,
                    got: col.len(),
                });
            }
            let mut words = vec![0u64; rows.div_ceil(64)];
            for (r, &b) in col.iter().enumerate() {
                if b {
                    words[r / 64] |= 1 << (r % 64);
                }
            }
            out.push(words);
        }
        Ok(TruthTable { n_in, columns: out })
    }

    /// Parses big-endian hex columns: the first hex digit's top bit is row 0.
    /// Exactly `ceil(2^n_in / 4)` digits are required and padding bits must
    /// be zero.
    pub fn from_hex(n_in: usize, columns: &[impl AsRef<str>]) -> Result<Self> {
        let rows = 1usize << n_in;
        let digits = rows.div_ceil(4);
        let mut bits_cols = Vec::with_capacity(columns.len());
        for col in columns {
            let s = col.as_ref().trim();
            if s.len() != digits {
                return Err(Error::SizeMismatch {
                    what: "hex column digits",
                    expected: digits,
                    got: s.len(),
                });
            }
            let mut bits = Vec::with_capacity(digits * 4);
            for ch in s.chars() {
                let v = ch
                    .to_digit(16)
                    .ok_or_else(|| Error::Config(format!("invalid hex digit {ch:?} in {s:?}")))?;
                for b in (0..4).rev() {
                    bits.push((v >> b) & 1 == 1);
                }
            }
            if bits[rows..].iter().any(|&b| b) {
                return Err(Error::Config(format!("non-zero padding bits in {s:?}")));
            }
            bits.truncate(rows);
            bits_cols.push(bits);
        }
        Self::from_bits(n_in, bits_cols)
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn n_out(&self) -> usize {
        self.columns.len()
    }

    pub fn rows(&self) -> usize {
        1 << self.n_in
    }

    pub fn bit(&self, col: usize, row: usize) -> bool {
        (self.columns[col][row / 64] >> (row % 64)) & 1 == 1
    }

    pub fn column_bits(&self, col: usize) -> Vec<bool> {
        (0..self.rows()).map(|r| self.bit(col, r)).collect()
    }

    pub fn column_words(&self, col: usize) -> &[u64] {
        &self.columns[col]
    }

    pub fn column_hex(&self, col: usize) -> String {
        let rows = self.rows();
        let digits = rows.div_ceil(4);
        let mut s = String::with_capacity(digits);
        for d in 0..digits {
            let mut v = 0u32;
            for b in 0..4 {
                let r = d * 4 + b;
                if r < rows && self.bit(col, r) {
                    v |= 1 << (3 - b);
                }
            }
            s.push(char::from_digit(v, 16).expect("nibble"));
        }
        s
    }

    pub fn to_hex(&self) -> Vec<String> {
        (0..self.n_out()).map(|c| self.column_hex(c)).collect()
    }

    pub fn complement(&self) -> Self {
        let mask = Self::row_mask(self.rows());
        TruthTable {
            n_in: self.n_in,
            columns: self
                .columns
                .iter()
                .map(|c| c.iter().zip(&mask).map(|(w, m)| !w & m).collect())
                .collect(),
        }
    }

    /// Number of differing output bits. Shapes must match.
    pub fn hamming(&self, other: &TruthTable) -> usize {
        self.columns
            .iter()
            .zip(&other.columns)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones() as usize).sum::<usize>())
            .sum()
    }

    /// Bit pattern of input `i` over all rows.
    pub(crate) fn input_column(n_in: usize, i: usize) -> Vec<u64> {
        let rows = 1usize << n_in;
        let mut words = vec![0u64; rows.div_ceil(64)];
        for r in 0..rows {
            if (r >> i) & 1 == 1 {
                words[r / 64] |= 1 << (r % 64);
            }
        }
        words
    }

    pub(crate) fn row_mask(rows: usize) -> Vec<u64> {
        let words = rows.div_ceil(64);
        (0..words)
            .map(|w| {
                let left = rows - w * 64;
                if left >= 64 {
                    u64::MAX
                } else {
                    (1u64 << left) - 1
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_roundtrip_and_length() {
        let tt = TruthTable::from_hex(3, &["e8"]).unwrap();
        assert_eq!(tt.column_hex(0), "e8");
        assert_eq!(
            tt.column_bits(0),
            vec![true, true, true, false, true, false, false, false]
        );
        // two input rows need exactly one digit
        assert!(TruthTable::from_hex(2, &["e8"]).is_err());
        assert!(TruthTable::from_hex(1, &["c"]).is_ok());
        assert!(TruthTable::from_hex(1, &["d"]).is_err());
        assert!(TruthTable::from_hex(3, &["zz"]).is_err());
    }

    #[test]
    fn wide_tables() {
        let bits: Vec<bool> = (0..256).map(|r| r % 3 == 0).collect();
        let tt = TruthTable::from_bits(8, vec![bits.clone()]).unwrap();
        let back = TruthTable::from_hex(8, &tt.to_hex()).unwrap();
        assert_eq!(back.column_bits(0), bits);
        assert_eq!(tt.complement().hamming(&tt), 256);
    }
}
