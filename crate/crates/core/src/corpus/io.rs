//! Line-oriented corpus files.
//!
//! * `sequences.txt`: one user per line, `user_id<TAB>item,item,...` with
//!   dense integer ids in time order.
//! * `items.tsv`, `users.tsv`: `dense_id<TAB>original_id`, one per line,
//!   dense ids ascending from 0.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::sequences::{Catalog, Corpus, UserSequence};
use crate::error::{Error, Result};

pub const SEQUENCES_FILE: &str = "sequences.txt";
pub const ITEMS_FILE: &str = "items.tsv";
pub const USERS_FILE: &str = "users.tsv";

fn write_catalog(path: &Path, cat: &Catalog) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for (i, n) in cat.names().iter().enumerate() {
        writeln!(w, "{i}\t{n}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    std::io::BufReader::new(f)
        .lines()
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| Error::io(path, e))
}

fn read_catalog(path: &Path) -> Result<Catalog> {
    let mut names = Vec::new();
    for (ln, line) in read_lines(path)?.into_iter().enumerate() {
        let (id, name) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.into(),
            line: ln + 1,
            msg: "expected dense_id<TAB>name".into(),
        })?;
        if id.parse::<usize>().ok() != Some(ln) {
            return Err(Error::Parse { path: path.into(), line: ln + 1, msg: format!("expected dense id {ln}") });
        }
        names.push(name.to_string());
    }
    let cat = Catalog::from_names(names.clone());
    if cat.names() != names.as_slice() {
        return Err(Error::Parse { path: path.into(), line: 0, msg: "ids are not sorted and unique".into() });
    }
    Ok(cat)
}

pub fn write_sequences<W: Write>(mut w: W, sequences: &[UserSequence]) -> std::io::Result<()> {
    for s in sequences {
        let items: Vec<String> = s.items.iter().map(usize::to_string).collect();
        writeln!(w, "{}\t{}", s.user, items.join(","))?;
    }
    Ok(())
}

pub fn parse_sequences(path: &Path, item_count: Option<usize>) -> Result<Vec<UserSequence>> {
    let mut out = Vec::new();
    for (ln, line) in read_lines(path)?.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse { path: path.into(), line: ln + 1, msg };
        let (user, items) = line.split_once('\t').ok_or_else(|| err("expected user<TAB>items".into()))?;
        let user = user.trim().parse::<usize>().map_err(|e| err(format!("user id: {e}")))?;
        let items = items
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|e| err(format!("item id {s:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if let (Some(n), Some(bad)) = (item_count, items.iter().find(|&&i| Some(i) >= item_count)) {
            return Err(err(format!("item id {bad} outside catalog of {n}")));
        }
        out.push(UserSequence { user, items });
    }
    Ok(out)
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let sp = dir.join(SEQUENCES_FILE);
    let f = std::fs::File::create(&sp).map_err(|e| Error::io(&sp, e))?;
    let mut w = BufWriter::new(f);
    write_sequences(&mut w, &corpus.sequences).map_err(|e| Error::io(&sp, e))?;
    w.flush().map_err(|e| Error::io(&sp, e))?;
    write_catalog(&dir.join(ITEMS_FILE), &corpus.items)?;
    write_catalog(&dir.join(USERS_FILE), &corpus.users)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let items = read_catalog(&dir.join(ITEMS_FILE))?;
    let users = read_catalog(&dir.join(USERS_FILE))?;
    let sequences = parse_sequences(&dir.join(SEQUENCES_FILE), Some(items.len()))?;
    if let Some(s) = sequences.iter().find(|s| s.user >= users.len()) {
        return Err(Error::Parse {
            path: dir.join(SEQUENCES_FILE),
            line: 0,
            msg: format!("user id {} outside {} users", s.user, users.len()),
        });
    }
    Ok(Corpus { items, users, sequences })
}

/// SHA-256 over the canonical sequence text and catalog size.
pub fn fingerprint(corpus: &Corpus) -> String {
    let mut h = Sha256::new();
    h.update(format!("items={}\n", corpus.items.len()).as_bytes());
    let mut buf = Vec::new();
    write_sequences(&mut buf, &corpus.sequences).unwrap();
    h.update(&buf);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_sequences;
    use crate::corpus::Interaction;

    #[test]
    fn corpus_roundtrip() {
        let rows = [("u2", "x"), ("u1", "y"), ("u1", "x"), ("u2", "z"), ("u1", "z")];
        let inter: Vec<Interaction> = rows
            .iter()
            .enumerate()
            .map(|(t, &(u, i))| Interaction { user: u.into(), item: i.into(), timestamp: Some(t as i64) })
            .collect();
        let corpus = build_sequences(&inter, 2, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_corpus(dir.path(), &corpus).unwrap();
        let text = std::fs::read_to_string(dir.path().join(SEQUENCES_FILE)).unwrap();
        assert_eq!(text, "0\t1,0,2\n1\t0,2\n");
        assert_eq!(read_corpus(dir.path()).unwrap(), corpus);
    }

    #[test]
    fn rejects_out_of_range_item() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.txt");
        std::fs::write(&p, "0\t1,5\n").unwrap();
        assert!(parse_sequences(&p, Some(3)).is_err());
        assert!(parse_sequences(&p, None).is_ok());
    }
}
