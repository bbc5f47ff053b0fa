//! Full training checkpoint (`MOLCKPT1`): config text, dataset dims,
//! progress counters, RNG position, every parameter and Adam moment in
//! f64, and the best-so-far model snapshot. Reload reproduces subsequent
//! training bit-identically.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::binio;
use crate::error::{MolarError, Result};
use crate::idmodels::IdModelKind;
use crate::numcore::tensor::Tensor;

pub const CKPT_MAGIC: &[u8; 8] = b"MOLCKPT1";

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub lr: f64,
    pub bce: f64,
    pub align: f64,
    pub total: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamBlob {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BestState {
    pub val_ndcg: f64,
    pub epoch: u32,
    pub encoder: Vec<Tensor>,
    pub dueg: Vec<Tensor>,
    pub id: Option<Vec<Tensor>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_text: String,
    pub num_users: u32,
    pub num_items: u32,
    pub epoch: u32,
    pub step_in_epoch: u32,
    pub global_step: u64,
    pub neg_rng_word_pos: u128,
    pub encoder_params: Vec<Tensor>,
    pub dueg_params: Vec<Tensor>,
    pub id_params: Option<(IdModelKind, Vec<Tensor>)>,
    pub adam_main: AdamBlob,
    pub adam_id: Option<AdamBlob>,
    pub best: Option<BestState>,
    pub val_curve: Vec<(u32, f64)>,
    pub losses: Vec<LossRow>,
}

fn kind_tag(kind: IdModelKind) -> u8 {
    match kind {
        IdModelKind::Fpmc => 0,
        IdModelKind::Gru4Rec => 1,
        IdModelKind::Sasrec => 2,
    }
}

fn kind_from_tag(tag: u8) -> Result<IdModelKind> {
    match tag {
        0 => Ok(IdModelKind::Fpmc),
        1 => Ok(IdModelKind::Gru4Rec),
        2 => Ok(IdModelKind::Sasrec),
        t => Err(MolarError::Format(format!("unknown id-model tag {t}"))),
    }
}

fn write_tensors<W: Write>(w: &mut W, tensors: &[Tensor]) -> Result<()> {
    binio::write_u32(w, tensors.len() as u32)?;
    for t in tensors {
        binio::write_tensor_f64(w, t)?;
    }
    Ok(())
}

fn read_tensors<R: Read>(r: &mut R) -> Result<Vec<Tensor>> {
    let n = binio::read_u32(r)? as usize;
    (0..n).map(|_| binio::read_tensor_f64(r)).collect()
}

fn write_adam<W: Write>(w: &mut W, blob: &AdamBlob) -> Result<()> {
    binio::write_u64(w, blob.step)?;
    write_tensors(w, &blob.m)?;
    write_tensors(w, &blob.v)
}

fn read_adam<R: Read>(r: &mut R) -> Result<AdamBlob> {
    Ok(AdamBlob {
        step: binio::read_u64(r)?,
        m: read_tensors(r)?,
        v: read_tensors(r)?,
    })
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(CKPT_MAGIC)?;
        let cfg = self.config_text.as_bytes();
        binio::write_u32(&mut w, cfg.len() as u32)?;
        w.write_all(cfg)?;
        binio::write_u32(&mut w, self.num_users)?;
        binio::write_u32(&mut w, self.num_items)?;
        binio::write_u32(&mut w, self.epoch)?;
        binio::write_u32(&mut w, self.step_in_epoch)?;
        binio::write_u64(&mut w, self.global_step)?;
        binio::write_u64(&mut w, (self.neg_rng_word_pos >> 64) as u64)?;
        binio::write_u64(&mut w, self.neg_rng_word_pos as u64)?;
        write_tensors(&mut w, &self.encoder_params)?;
        write_tensors(&mut w, &self.dueg_params)?;
        match &self.id_params {
            Some((kind, params)) => {
                w.write_all(&[1, kind_tag(*kind)])?;
                write_tensors(&mut w, params)?;
            }
            None => w.write_all(&[0, 0])?,
        }
        write_adam(&mut w, &self.adam_main)?;
        match &self.adam_id {
            Some(blob) => {
                w.write_all(&[1])?;
                write_adam(&mut w, blob)?;
            }
            None => w.write_all(&[0])?,
        }
        match &self.best {
            Some(best) => {
                w.write_all(&[1])?;
                binio::write_f64(&mut w, best.val_ndcg)?;
                binio::write_u32(&mut w, best.epoch)?;
                write_tensors(&mut w, &best.encoder)?;
                write_tensors(&mut w, &best.dueg)?;
                match &best.id {
                    Some(id) => {
                        w.write_all(&[1])?;
                        write_tensors(&mut w, id)?;
                    }
                    None => w.write_all(&[0])?,
                }
            }
            None => w.write_all(&[0])?,
        }
        binio::write_u32(&mut w, self.val_curve.len() as u32)?;
        for &(epoch, v) in &self.val_curve {
            binio::write_u32(&mut w, epoch)?;
            binio::write_f64(&mut w, v)?;
        }
        binio::write_u32(&mut w, self.losses.len() as u32)?;
        for row in &self.losses {
            binio::write_u64(&mut w, row.step)?;
            binio::write_f64(&mut w, row.lr)?;
            binio::write_f64(&mut w, row.bce)?;
            binio::write_f64(&mut w, row.align)?;
            binio::write_f64(&mut w, row.total)?;
            binio::write_f64(&mut w, row.grad_norm)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path).map_err(|e| {
            MolarError::Io(std::io::Error::new(
                e.kind(),
                format!("{}: {e}", path.display()),
            ))
        })?);
        binio::expect_magic(&mut r, CKPT_MAGIC, "MOLCKPT1 checkpoint")?;
        let cfg_len = binio::read_u32(&mut r)? as usize;
        let mut cfg_bytes = vec![0u8; cfg_len];
        r.read_exact(&mut cfg_bytes)?;
        let config_text = String::from_utf8(cfg_bytes)
            .map_err(|_| MolarError::Format("checkpoint config is not utf-8".into()))?;
        let num_users = binio::read_u32(&mut r)?;
        let num_items = binio::read_u32(&mut r)?;
        let epoch = binio::read_u32(&mut r)?;
        let step_in_epoch = binio::read_u32(&mut r)?;
        let global_step = binio::read_u64(&mut r)?;
        let hi = binio::read_u64(&mut r)? as u128;
        let lo = binio::read_u64(&mut r)? as u128;
        let neg_rng_word_pos = (hi << 64) | lo;
        let encoder_params = read_tensors(&mut r)?;
        let dueg_params = read_tensors(&mut r)?;
        let mut flag = [0u8; 2];
        r.read_exact(&mut flag)?;
        let id_params = if flag[0] == 1 {
            Some((kind_from_tag(flag[1])?, read_tensors(&mut r)?))
        } else {
            None
        };
        let adam_main = read_adam(&mut r)?;
        let mut b = [0u8; 1];
        r.read_exact(&mut b)?;
        let adam_id = if b[0] == 1 { Some(read_adam(&mut r)?) } else { None };
        r.read_exact(&mut b)?;
        let best = if b[0] == 1 {
            let val_ndcg = binio::read_f64(&mut r)?;
            let epoch = binio::read_u32(&mut r)?;
            let encoder = read_tensors(&mut r)?;
            let dueg = read_tensors(&mut r)?;
            r.read_exact(&mut b)?;
            let id = if b[0] == 1 { Some(read_tensors(&mut r)?) } else { None };
            Some(BestState {
                val_ndcg,
                epoch,
                encoder,
                dueg,
                id,
            })
        } else {
            None
        };
        let n_val = binio::read_u32(&mut r)? as usize;
        let mut val_curve = Vec::with_capacity(n_val);
        for _ in 0..n_val {
            let e = binio::read_u32(&mut r)?;
            let v = binio::read_f64(&mut r)?;
            val_curve.push((e, v));
        }
        let n_loss = binio::read_u32(&mut r)? as usize;
        let mut losses = Vec::with_capacity(n_loss);
        for _ in 0..n_loss {
            losses.push(LossRow {
                step: binio::read_u64(&mut r)?,
                lr: binio::read_f64(&mut r)?,
                bce: binio::read_f64(&mut r)?,
                align: binio::read_f64(&mut r)?,
                total: binio::read_f64(&mut r)?,
                grad_norm: binio::read_f64(&mut r)?,
            });
        }
        Ok(Self {
            config_text,
            num_users,
            num_items,
            epoch,
            step_in_epoch,
            global_step,
            neg_rng_word_pos,
            encoder_params,
            dueg_params,
            id_params,
            adam_main,
            adam_id,
            best,
            val_curve,
            losses,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            config_text: "d=8\n".into(),
            num_users: 5,
            num_items: 9,
            epoch: 2,
            step_in_epoch: 3,
            global_step: 17,
            neg_rng_word_pos: (7u128 << 64) | 12345,
            encoder_params: vec![Tensor::from_vec(vec![1.5, -2.25])],
            dueg_params: vec![Tensor::matrix(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap()],
            id_params: Some((IdModelKind::Sasrec, vec![Tensor::scalar(9.0)])),
            adam_main: AdamBlob {
                step: 4,
                m: vec![Tensor::from_vec(vec![0.0, 1.0])],
                v: vec![Tensor::from_vec(vec![2.0, 3.0])],
            },
            adam_id: None,
            best: Some(BestState {
                val_ndcg: 0.25,
                epoch: 1,
                encoder: vec![Tensor::scalar(1.0)],
                dueg: vec![Tensor::scalar(2.0)],
                id: Some(vec![Tensor::scalar(3.0)]),
            }),
            val_curve: vec![(0, 0.1), (1, 0.25)],
            losses: vec![LossRow {
                step: 0,
                lr: 1e-4,
                bce: 1.4,
                align: 2.0,
                total: 1.6,
                grad_norm: 0.9,
            }],
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let ckpt = sample();
        ckpt.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        assert_eq!(loaded, ckpt);
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_files_error_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        sample().save(&p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        assert!(Checkpoint::load(&p).is_err());
    }
}
