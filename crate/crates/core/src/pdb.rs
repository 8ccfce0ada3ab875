//! Fixed-column PDB reader for a single chain slice.
//!
//! Only `ATOM` records of the first model are used. Residues are grouped by
//! `(resSeq, iCode, resName)` in file order, and a residue is kept when it
//! carries an alpha carbon (atom name ` CA `). Alternate locations other than
//! blank or `A` are skipped.

use std::fmt::Write as _;

use thiserror::Error;

pub const STANDARD_RESIDUES: [(&str, char); 20] = [
    ("ALA", 'A'),
    ("CYS", 'C'),
    ("ASP", 'D'),
    ("GLU", 'E'),
    ("PHE", 'F'),
    ("GLY", 'G'),
    ("HIS", 'H'),
    ("ILE", 'I'),
    ("LYS", 'K'),
    ("LEU", 'L'),
    ("MET", 'M'),
    ("ASN", 'N'),
    ("PRO", 'P'),
    ("GLN", 'Q'),
    ("ARG", 'R'),
    ("SER", 'S'),
    ("THR", 'T'),
    ("VAL", 'V'),
    ("TRP", 'W'),
    ("TYR", 'Y'),
];

/// One-letter code of a standard three-letter residue name.
pub fn one_letter(name: &str) -> Option<char> {
    STANDARD_RESIDUES
        .iter()
        .find(|(three, _)| *three == name)
        .map(|&(_, c)| c)
}

/// Three-letter name of a standard one-letter code.
pub fn three_letter(code: char) -> Option<&'static str> {
    STANDARD_RESIDUES
        .iter()
        .find(|(_, c)| *c == code)
        .map(|&(three, _)| three)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PdbError {
    #[error("input is empty")]
    EmptyInput,
    #[error("no ATOM record for chain {0:?}")]
    ChainNotFound(char),
    #[error("chain {chain:?} has no residue with a CA atom in the requested range")]
    EmptySlice { chain: char },
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("nonstandard residue {name} at {seq_id}{insertion_code}")]
    NonstandardResidue {
        name: String,
        seq_id: i32,
        insertion_code: char,
    },
}

/// Identity of a residue in a chain: author number plus insertion code
/// (blank is `' '`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResidueId {
    pub seq_id: i32,
    pub insertion_code: char,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residue {
    pub seq_id: i32,
    pub insertion_code: char,
    /// Three-letter residue name as written in the file.
    pub name: String,
    pub ca_position: [f64; 3],
}

impl Residue {
    pub fn id(&self) -> ResidueId {
        ResidueId {
            seq_id: self.seq_id,
            insertion_code: self.insertion_code,
        }
    }

    /// One-letter code, `None` for names outside the 20 standard residues.
    pub fn one_letter(&self) -> Option<char> {
        one_letter(&self.name)
    }
}

/// A residue seen in the slice that could not contribute a CA position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedResidue {
    pub id: ResidueId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainStructure {
    pub pdb_id: String,
    pub chain_id: char,
    pub residues: Vec<Residue>,
    /// `ATOM` residues in the slice without an alpha carbon.
    pub missing_ca: Vec<SkippedResidue>,
    /// `HETATM` residues in the slice that carry an alpha carbon (e.g. MSE).
    pub hetero: Vec<SkippedResidue>,
}

impl ChainStructure {
    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    pub fn ca_positions(&self) -> Vec<[f64; 3]> {
        self.residues.iter().map(|r| r.ca_position).collect()
    }

    /// Writes a HEADER line and one CA `ATOM` record per residue, in the same
    /// fixed-column layout the parser reads, terminated by `TER` and `END`.
    pub fn to_pdb(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "HEADER    {:<40}{:9}   {:<4}", "", "", self.pdb_id);
        for (serial, r) in self.residues.iter().enumerate() {
            let _ = writeln!(
                out,
                "ATOM  {:>5} {:<4} {:>3} {}{:>4}{}   {:>8.3}{:>8.3}{:>8.3}{:>6.2}{:>6.2}           C",
                serial + 1,
                " CA",
                r.name,
                self.chain_id,
                r.seq_id,
                r.insertion_code,
                r.ca_position[0],
                r.ca_position[1],
                r.ca_position[2],
                1.0,
                0.0,
            );
        }
        let _ = writeln!(out, "TER");
        let _ = writeln!(out, "END");
        out
    }
}

/// Chain identity from the `HEADER` record (columns 63-66), if present.
fn header_id(text: &str) -> Option<String> {
    text.lines()
        .find(|l| l.starts_with("HEADER"))
        .and_then(|l| l.get(62..66))
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
}

fn column(line: &str, start: usize, end: usize) -> &str {
    // PDB columns are 1-based and inclusive; lines may be short or padded.
    let len = line.len();
    if start > len {
        return "";
    }
    line.get(start - 1..end.min(len)).unwrap_or("")
}

fn char_at(line: &str, col: usize) -> char {
    line.as_bytes()
        .get(col - 1)
        .map(|&b| b as char)
        .unwrap_or(' ')
}

struct AtomLine<'a> {
    atom_name: &'a str,
    alt_loc: char,
    res_name: &'a str,
    res_seq: i32,
    insertion_code: char,
    xyz: [f64; 3],
}

fn parse_atom_line(line: &str, lineno: usize) -> Result<AtomLine<'_>, PdbError> {
    let malformed = |reason: String| PdbError::MalformedLine {
        line: lineno,
        reason,
    };
    if !line.is_ascii() {
        return Err(malformed("non-ASCII characters".into()));
    }
    if line.len() < 54 {
        return Err(malformed(format!(
            "record is {} columns, need 54",
            line.len()
        )));
    }
    let res_seq = column(line, 23, 26)
        .trim()
        .parse::<i32>()
        .map_err(|_| malformed(format!("bad residue number {:?}", column(line, 23, 26))))?;
    let mut xyz = [0.0; 3];
    for (k, (s, e)) in [(31, 38), (39, 46), (47, 54)].into_iter().enumerate() {
        let field = column(line, s, e).trim();
        xyz[k] = field
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| malformed(format!("bad coordinate {field:?}")))?;
    }
    Ok(AtomLine {
        atom_name: column(line, 13, 16),
        alt_loc: char_at(line, 17),
        res_name: column(line, 18, 20).trim(),
        res_seq,
        insertion_code: char_at(line, 27),
        xyz,
    })
}

struct Pending {
    id: ResidueId,
    name: String,
    hetero: bool,
    ca: Option<[f64; 3]>,
}

/// Extracts the residues of `chain_id` (optionally restricted to an inclusive
/// author-numbered range) that have an alpha carbon in an `ATOM` record.
///
/// The range compares author `seq_id` only; insertion codes are ignored.
pub fn parse_structure(
    pdb_text: &str,
    chain_id: char,
    residue_range: Option<(i32, i32)>,
) -> Result<ChainStructure, PdbError> {
    if pdb_text.trim().is_empty() {
        return Err(PdbError::EmptyInput);
    }
    let in_range = |seq: i32| residue_range.is_none_or(|(lo, hi)| seq >= lo && seq <= hi);

    let mut chain_seen = false;
    let mut done: Vec<Pending> = Vec::new();
    let mut current: Option<Pending> = None;

    for (idx, line) in pdb_text.lines().enumerate() {
        if line.starts_with("ENDMDL") {
            break;
        }
        let is_atom = line.starts_with("ATOM  ");
        let is_het = line.starts_with("HETATM");
        if !is_atom && !is_het {
            continue;
        }
        if char_at(line, 22) != chain_id {
            continue;
        }
        let rec = parse_atom_line(line, idx + 1)?;
        if is_atom {
            chain_seen = true;
        }
        if !in_range(rec.res_seq) {
            continue;
        }
        if rec.alt_loc != ' ' && rec.alt_loc != 'A' {
            continue;
        }
        let id = ResidueId {
            seq_id: rec.res_seq,
            insertion_code: rec.insertion_code,
        };
        let same = current
            .as_ref()
            .is_some_and(|p| p.id == id && p.name == rec.res_name && p.hetero == is_het);
        if !same {
            if let Some(p) = current.take() {
                done.push(p);
            }
            current = Some(Pending {
                id,
                name: rec.res_name.to_string(),
                hetero: is_het,
                ca: None,
            });
        }
        if rec.atom_name == " CA " {
            let p = current.as_mut().expect("pending residue");
            if p.ca.is_none() {
                p.ca = Some(rec.xyz);
            }
        }
    }
    if let Some(p) = current.take() {
        done.push(p);
    }
    if !chain_seen {
        return Err(PdbError::ChainNotFound(chain_id));
    }

    let mut residues = Vec::new();
    let mut missing_ca = Vec::new();
    let mut hetero = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for p in done {
        if p.hetero {
            // ligands and waters carry no alpha carbon
            if p.ca.is_some() {
                hetero.push(SkippedResidue {
                    id: p.id,
                    name: p.name,
                });
            }
            continue;
        }
        if !seen.insert(p.id) {
            return Err(PdbError::MalformedLine {
                line: 0,
                reason: format!(
                    "residue {}{} appears twice",
                    p.id.seq_id, p.id.insertion_code
                ),
            });
        }
        match p.ca {
            Some(ca_position) => residues.push(Residue {
                seq_id: p.id.seq_id,
                insertion_code: p.id.insertion_code,
                name: p.name,
                ca_position,
            }),
            None => missing_ca.push(SkippedResidue {
                id: p.id,
                name: p.name,
            }),
        }
    }
    if residues.is_empty() {
        return Err(PdbError::EmptySlice { chain: chain_id });
    }
    Ok(ChainStructure {
        pdb_id: header_id(pdb_text).unwrap_or_else(|| "XXXX".to_string()),
        chain_id,
        residues,
        missing_ca,
        hetero,
    })
}

/// One-letter sequence of the chain; rejects any nonstandard residue.
pub fn residues_to_sequence(chain: &ChainStructure) -> Result<String, PdbError> {
    chain
        .residues
        .iter()
        .map(|r| {
            r.one_letter().ok_or_else(|| PdbError::NonstandardResidue {
                name: r.name.clone(),
                seq_id: r.seq_id,
                insertion_code: r.insertion_code,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompletenessReport {
    pub n_residues: usize,
    pub n_missing_ca: usize,
    pub n_gaps: usize,
    pub nonstandard_residues: Vec<String>,
    pub passed: bool,
}

/// Stand-in for an external secondary-structure assignment check: flags
/// numbering gaps, residues without an alpha carbon and nonstandard residues.
///
/// A gap is any step where the next author number exceeds the previous one
/// by more than one; insertion codes never open a gap. When a range is
/// given, a missing first or last residue also counts as a gap.
pub fn check_completeness(
    chain: &ChainStructure,
    residue_range: Option<(i32, i32)>,
) -> CompletenessReport {
    let mut n_gaps = chain
        .residues
        .windows(2)
        .filter(|w| w[1].seq_id > w[0].seq_id + 1)
        .count();
    if let (Some((lo, hi)), Some(first), Some(last)) =
        (residue_range, chain.residues.first(), chain.residues.last())
    {
        if first.seq_id > lo {
            n_gaps += 1;
        }
        if last.seq_id < hi {
            n_gaps += 1;
        }
    }
    let mut nonstandard_residues: Vec<String> = chain
        .residues
        .iter()
        .filter(|r| r.one_letter().is_none())
        .map(|r| r.name.clone())
        .chain(chain.hetero.iter().map(|h| h.name.clone()))
        .collect();
    nonstandard_residues.dedup();
    let n_missing_ca = chain.missing_ca.len();
    CompletenessReport {
        n_residues: chain.residues.len(),
        n_missing_ca,
        n_gaps,
        passed: n_missing_ca == 0 && n_gaps == 0 && nonstandard_residues.is_empty(),
        nonstandard_residues,
    }
}
