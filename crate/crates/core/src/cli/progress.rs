use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use crate::ensemble::ProgressRow;
use crate::error::Result;

/// Appends rows to `progress.csv`, each with one `write_all` followed by a
/// flush so an interrupted run never leaves a torn line behind.
#[derive(Debug)]
pub struct ProgressWriter {
    file: File,
}

impl ProgressWriter {
    /// Truncates `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = File::create(path)?;
        file.write_all(format!("{}\n", ProgressRow::HEADER).as_bytes())?;
        file.flush()?;
        Ok(Self { file })
    }

    /// Continues an existing file, or starts a new one with a header.
    pub fn append(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Self::create(path);
        }
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(Self { file })
    }

    pub fn write_row(&mut self, row: &ProgressRow) -> Result<()> {
        self.file.write_all(row.to_csv().as_bytes())?;
        self.file.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(ep: u64) -> ProgressRow {
        ProgressRow {
            episode: ep,
            env_steps: 200 * ep,
            eval_mean: -150.5,
            eval_std: 12.25,
            critic_loss: 0.5,
            central_loss: 0.75,
        }
    }

    #[test]
    fn create_then_append() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("progress.csv");
        let mut w = ProgressWriter::create(&p).unwrap();
        w.write_row(&row(10)).unwrap();
        drop(w);
        ProgressWriter::append(&p)
            .unwrap()
            .write_row(&row(20))
            .unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "episode,env_steps,eval_mean,eval_std,critic_loss,central_loss\n\
             10,2000,-150.5,12.25,0.5,0.75\n\
             20,4000,-150.5,12.25,0.5,0.75\n"
        );
    }
}
