use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};

pub const PINYIN_LEN: usize = 6;

/// Toneless pinyin as six letter codes: `a..z → 1..26` (ü written `v`),
/// zero-padded on the right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct PinyinCode(pub [u8; PINYIN_LEN]);

impl PinyinCode {
    pub const EMPTY: PinyinCode = PinyinCode([0; PINYIN_LEN]);

    /// Encode a toneless reading such as `zhuang` or `lv`. A trailing tone
    /// digit is dropped.
    pub fn from_reading(reading: &str) -> std::result::Result<Self, String> {
        let reading = reading.trim().trim_end_matches(|c: char| ('1'..='5').contains(&c));
        if reading.is_empty() {
            return Err("empty reading".into());
        }
        let mut codes = [0u8; PINYIN_LEN];
        for (n, c) in reading.chars().enumerate() {
            let c = match c.to_ascii_lowercase() {
                'ü' | 'Ü' => 'v',
                c => c,
            };
            if !c.is_ascii_lowercase() {
                return Err(format!("invalid letter {c:?} in reading {reading:?}"));
            }
            if n == PINYIN_LEN {
                return Err(format!("reading {reading:?} is longer than {PINYIN_LEN} letters"));
            }
            codes[n] = c as u8 - b'a' + 1;
        }
        Ok(PinyinCode(codes))
    }

    pub fn is_empty(&self) -> bool {
        self.0[0] == 0
    }

    pub fn codes(&self) -> &[u8; PINYIN_LEN] {
        &self.0
    }

    /// Padding invariant: no letter after the first zero.
    pub fn is_well_formed(&self) -> bool {
        let first_zero = self.0.iter().position(|&c| c == 0).unwrap_or(PINYIN_LEN);
        self.0[..first_zero].iter().all(|&c| (1..=26).contains(&c)) && self.0[first_zero..].iter().all(|&c| c == 0)
    }

    pub fn reading(&self) -> String {
        self.0
            .iter()
            .take_while(|&&c| c != 0)
            .map(|&c| (b'a' + c - 1) as char)
            .collect()
    }
}

impl fmt::Display for PinyinCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.reading())
    }
}

/// Character → pinyin lookup. Misses return the all-zero code and are counted.
#[derive(Debug, Default)]
pub struct PinyinTable {
    map: HashMap<char, PinyinCode>,
    order: Vec<char>,
    warnings: Vec<String>,
    misses: AtomicUsize,
}

impl Clone for PinyinTable {
    fn clone(&self) -> Self {
        Self {
            map: self.map.clone(),
            order: self.order.clone(),
            warnings: self.warnings.clone(),
            misses: AtomicUsize::new(self.misses.load(Ordering::Relaxed)),
        }
    }
}

pub fn load_pinyin_table(path: impl AsRef<Path>) -> Result<PinyinTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PinyinTable::parse(&text, path)
}

impl PinyinTable {
    /// Parse TSV lines `U+XXXX<TAB>reading` or `char<TAB>reading`. Blank lines
    /// and `#` comments are ignored; duplicate characters keep their first
    /// reading.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut table = PinyinTable::default();
        for (lineno, line) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                msg,
            };
            let (key, reading) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected `char<TAB>reading`".into()))?;
            let c = parse_char_key(key).map_err(parse_err)?;
            // heteronyms may list several readings; the first wins
            let first = reading.split([',', ' ']).find(|r| !r.is_empty()).unwrap_or("");
            let code = PinyinCode::from_reading(first).map_err(parse_err)?;
            if table.map.contains_key(&c) {
                let msg = format!(
                    "{}:{lineno}: duplicate entry for {c:?}, keeping the first",
                    path.display()
                );
                log::warn!("{msg}");
                table.warnings.push(msg);
                continue;
            }
            table.map.insert(c, code);
            table.order.push(c);
        }
        Ok(table)
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (char, PinyinCode)>) -> Self {
        let mut table = PinyinTable::default();
        for (c, code) in entries {
            if table.map.insert(c, code).is_none() {
                table.order.push(c);
            }
        }
        table
    }

    pub fn code(&self, c: char) -> PinyinCode {
        match self.map.get(&c) {
            Some(&code) => code,
            None => {
                self.misses.fetch_add(1, Ordering::Relaxed);
                PinyinCode::EMPTY
            }
        }
    }

    pub fn get(&self, c: char) -> Option<PinyinCode> {
        self.map.get(&c).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Entries in file order.
    pub fn entries(&self) -> impl Iterator<Item = (char, PinyinCode)> + '_ {
        self.order.iter().map(|c| (*c, self.map[c]))
    }

    pub fn to_tsv(&self) -> String {
        self.entries().map(|(c, code)| format!("{c}\t{code}\n")).collect()
    }
}

fn parse_char_key(key: &str) -> std::result::Result<char, String> {
    if let Some(hex) = key.strip_prefix("U+").or_else(|| key.strip_prefix("u+")) {
        let cp = u32::from_str_radix(hex, 16).map_err(|_| format!("bad codepoint {key:?}"))?;
        return char::from_u32(cp).ok_or_else(|| format!("invalid codepoint {key:?}"));
    }
    let mut it = key.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(format!("expected a single character, got {key:?}")),
    }
}
