//! The canonical preprocessed dataset directory: `items.tsv`, `users.tsv`,
//! `interactions.tsv`, `split.tsv`. All files are written in deterministic
//! order so identical inputs produce bit-identical directories.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::dataio::{InteractionMatrix, SensitiveLabels, SplitSpec, SplitTag};
use crate::error::{Error, Result};

/// A loaded canonical dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub matrix: InteractionMatrix,
    pub labels: SensitiveLabels,
    pub tags: Vec<SplitTag>,
}

impl Dataset {
    pub fn users_with(&self, tag: SplitTag) -> Vec<usize> {
        (0..self.matrix.n_users())
            .filter(|&u| self.tags[u] == tag)
            .collect()
    }
}

pub fn write_dataset(
    dir: &Path,
    matrix: &InteractionMatrix,
    labels: &SensitiveLabels,
    split: &SplitSpec,
) -> Result<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))?;
    let write = |name: &str, content: String| -> Result<()> {
        fs::write(dir.join(name), content)
            .map_err(|e| Error::Data(format!("cannot write {name}: {e}")))
    };

    let mut items = String::new();
    for id in matrix.item_ids() {
        items.push_str(id);
        items.push('\n');
    }
    write("items.tsv", items)?;

    let mut users = String::new();
    for (u, id) in matrix.user_ids().iter().enumerate() {
        users.push_str(&format!(
            "{id}\t{}\t{}\n",
            labels.gender[u], labels.age_group[u]
        ));
    }
    write("users.tsv", users)?;

    let mut inter = String::new();
    for (u, id) in matrix.user_ids().iter().enumerate() {
        for &col in matrix.user_row(u) {
            inter.push_str(&format!("{id}\t{}\n", matrix.item_ids()[col as usize]));
        }
    }
    write("interactions.tsv", inter)?;

    let tags = split.tags(matrix.n_users());
    let mut split_out = String::new();
    for (u, id) in matrix.user_ids().iter().enumerate() {
        split_out.push_str(&format!("{id}\t{}\n", tags[u].as_str()));
    }
    write("split.tsv", split_out)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let read = |name: &str| -> Result<String> {
        fs::read_to_string(dir.join(name)).map_err(|e| {
            Error::Data(format!(
                "missing canonical file {} in {}: {e}",
                name,
                dir.display()
            ))
        })
    };
    let items: Vec<String> = read("items.tsv")?
        .lines()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect();
    if items.is_empty() {
        return Err(Error::Data("items.tsv is empty".into()));
    }

    let mut user_ids = Vec::new();
    let mut gender = Vec::new();
    let mut age_group = Vec::new();
    for (i, line) in read("users.tsv")?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                file: dir.join("users.tsv").display().to_string(),
                line: i + 1,
                msg: "expected (user, gender, age_group)".into(),
            });
        }
        let parse_bit = |s: &str, what: &str| -> Result<u8> {
            match s {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(Error::Parse {
                    file: dir.join("users.tsv").display().to_string(),
                    line: i + 1,
                    msg: format!("{what} must be 0 or 1, got '{other}'"),
                }),
            }
        };
        user_ids.push(fields[0].to_string());
        gender.push(parse_bit(fields[1], "gender")?);
        age_group.push(parse_bit(fields[2], "age_group")?);
    }
    let user_index: BTreeMap<String, usize> = user_ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i))
        .collect();
    let item_index: BTreeMap<String, usize> = items
        .iter()
        .enumerate()
        .map(|(i, id)| (id.clone(), i))
        .collect();

    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); user_ids.len()];
    for (i, line) in read("interactions.tsv")?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                file: dir.join("interactions.tsv").display().to_string(),
                line: i + 1,
                msg: "expected (user, item)".into(),
            });
        }
        let u = *user_index.get(fields[0]).ok_or_else(|| Error::Parse {
            file: dir.join("interactions.tsv").display().to_string(),
            line: i + 1,
            msg: format!("unknown user '{}'", fields[0]),
        })?;
        let it = *item_index.get(fields[1]).ok_or_else(|| Error::Parse {
            file: dir.join("interactions.tsv").display().to_string(),
            line: i + 1,
            msg: format!("unknown item '{}'", fields[1]),
        })?;
        rows[u].push(it as u32);
    }
    for (u, row) in rows.iter_mut().enumerate() {
        row.sort_unstable();
        row.dedup();
        if row.is_empty() {
            return Err(Error::Data(format!(
                "user {} has no interactions",
                user_ids[u]
            )));
        }
    }

    let mut tags = vec![SplitTag::Train; user_ids.len()];
    let mut seen = vec![false; user_ids.len()];
    for (i, line) in read("split.tsv")?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                file: dir.join("split.tsv").display().to_string(),
                line: i + 1,
                msg: "expected (user, split)".into(),
            });
        }
        let u = *user_index.get(fields[0]).ok_or_else(|| Error::Parse {
            file: dir.join("split.tsv").display().to_string(),
            line: i + 1,
            msg: format!("unknown user '{}'", fields[0]),
        })?;
        tags[u] = SplitTag::parse(fields[1])?;
        seen[u] = true;
    }
    if let Some(u) = seen.iter().position(|&s| !s) {
        return Err(Error::Data(format!(
            "user {} missing from split.tsv",
            user_ids[u]
        )));
    }

    let matrix = InteractionMatrix {
        user_ids,
        item_ids: items,
        user_index,
        item_index,
        rows,
    };
    Ok(Dataset {
        matrix,
        labels: SensitiveLabels { gender, age_group },
        tags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::split_users;
    use std::collections::BTreeMap;

    #[test]
    fn dataset_round_trips_bitwise() {
        let mut positives = BTreeMap::new();
        for u in 0..40 {
            positives.insert(
                format!("{u}"),
                vec![format!("{}", u % 5), format!("{}", (u + 2) % 5)],
            );
        }
        let matrix = InteractionMatrix::from_positives(&positives).unwrap();
        let labels = SensitiveLabels {
            gender: (0..40).map(|u| (u % 2) as u8).collect(),
            age_group: (0..40).map(|u| ((u / 2) % 2) as u8).collect(),
        };
        let split = split_users(&matrix, &labels, (0.6, 0.2, 0.2), 5).unwrap();

        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &matrix, &labels, &split).unwrap();
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.matrix, matrix);
        assert_eq!(loaded.labels, labels);
        assert_eq!(loaded.tags, split.tags(40));

        let dir2 = tempfile::tempdir().unwrap();
        write_dataset(dir2.path(), &loaded.matrix, &loaded.labels, &split).unwrap();
        for name in ["items.tsv", "users.tsv", "interactions.tsv", "split.tsv"] {
            let a = std::fs::read(dir.path().join(name)).unwrap();
            let b = std::fs::read(dir2.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
    }

    #[test]
    fn missing_file_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}
