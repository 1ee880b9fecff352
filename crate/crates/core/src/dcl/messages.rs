use std::cell::Cell;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::io::backbone_bytes;
use crate::models::{decode_model, decode_sc_model, encode_model, encode_sc_model, hex, ArchSpec, MultiHeadModel, SCModel};

/// Initialization sent from the consolidated model to a device.
#[derive(Debug, Clone, PartialEq)]
pub struct InitMessage {
    pub step: u32,
    pub arch_hash: String,
    /// Encoded model snapshot.
    pub payload: Vec<u8>,
}

impl InitMessage {
    pub fn from_model(step: u32, model: &MultiHeadModel<f32>) -> Self {
        Self {
            step,
            arch_hash: model.arch().hash(),
            payload: encode_model(model),
        }
    }

    /// Decodes the snapshot, checking the declared hash against both the
    /// payload and `expected`.
    pub fn decode(&self, expected: &ArchSpec) -> Result<MultiHeadModel<f32>> {
        let model = decode_model::<f32>(&self.payload, Some(expected))?;
        if model.arch().hash() != self.arch_hash {
            return Err(Error::HashMismatch {
                expected: self.arch_hash.clone(),
                found: model.arch().hash(),
            });
        }
        Ok(model)
    }

    /// Backbone payload bytes of the snapshot.
    pub fn backbone_bytes(&self, expected: &ArchSpec) -> Result<Vec<u8>> {
        Ok(backbone_bytes(self.decode(expected)?.backbone()))
    }
}

/// A trained self-centered model sent back for consolidation.
#[derive(Debug, Clone, PartialEq)]
pub struct SCMessage {
    pub task_id: u32,
    pub classes: Vec<u32>,
    pub payload: Vec<u8>,
}

impl SCMessage {
    pub fn from_model(model: &SCModel<f32>) -> Self {
        Self {
            task_id: model.task_id(),
            classes: model.classes().to_vec(),
            payload: encode_sc_model(model),
        }
    }

    pub fn decode(&self, expected: Option<&ArchSpec>) -> Result<SCModel<f32>> {
        let model = decode_sc_model::<f32>(&self.payload, expected)?;
        if model.task_id() != self.task_id || model.classes() != self.classes.as_slice() {
            return Err(Error::Protocol(format!(
                "SC message declares task {} {:?} but carries task {} {:?}",
                self.task_id,
                self.classes,
                model.task_id(),
                model.classes()
            )));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Consolidated model to device.
    Init,
    /// Device to consolidated model.
    Sc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub step: u32,
    pub direction: Direction,
    pub device: u32,
    pub bytes: usize,
    pub sha256: String,
}

/// Ordered record of every message exchanged in a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MessageLog {
    pub records: Vec<MessageRecord>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

impl MessageLog {
    pub fn record_init(&mut self, device: u32, msg: &InitMessage) {
        self.push(msg.step, Direction::Init, device, &msg.payload);
    }

    pub fn record_sc(&mut self, step: u32, msg: &SCMessage) {
        self.push(step, Direction::Sc, msg.task_id, &msg.payload);
    }

    fn push(&mut self, step: u32, direction: Direction, device: u32, payload: &[u8]) {
        self.records.push(MessageRecord {
            step,
            direction,
            device,
            bytes: payload.len(),
            sha256: sha256_hex(payload),
        });
    }

    /// Every device in `devices` sent exactly one init and one SC message,
    /// init first, and no other device appears.
    pub fn check_two_messages(&self, devices: &[u32]) -> Result<()> {
        for &d in devices {
            let dirs: Vec<Direction> = self.records.iter().filter(|r| r.device == d).map(|r| r.direction).collect();
            if dirs != [Direction::Init, Direction::Sc] {
                return Err(Error::Protocol(format!("device {d} exchanged {dirs:?}, expected [Init, Sc]")));
            }
        }
        if let Some(r) = self.records.iter().find(|r| !devices.contains(&r.device)) {
            return Err(Error::Protocol(format!("message from unknown device {}", r.device)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.records).expect("records serialize") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(Self {
            records: serde_json::from_str(text)?,
        })
    }
}

/// Counts teacher models held in memory during consolidation.
#[derive(Debug)]
pub struct Residency {
    limit: usize,
    current: Cell<usize>,
    peak: Cell<usize>,
}

impl Default for Residency {
    fn default() -> Self {
        Self::new(2)
    }
}

/// Held while a teacher is resident; releases its slot on drop.
#[derive(Debug)]
pub struct ResidencyGuard<'a> {
    owner: &'a Residency,
}

impl Drop for ResidencyGuard<'_> {
    fn drop(&mut self) {
        self.owner.current.set(self.owner.current.get() - 1);
    }
}

impl Residency {
    pub fn new(limit: usize) -> Self {
        Self {
            limit,
            current: Cell::new(0),
            peak: Cell::new(0),
        }
    }

    pub fn acquire(&self) -> Result<ResidencyGuard<'_>> {
        let next = self.current.get() + 1;
        if next > self.limit {
            return Err(Error::Protocol(format!(
                "{next} teacher models resident, at most {} allowed",
                self.limit
            )));
        }
        self.current.set(next);
        self.peak.set(self.peak.get().max(next));
        Ok(ResidencyGuard { owner: self })
    }

    pub fn current(&self) -> usize {
        self.current.get()
    }

    /// Highest count seen so far.
    pub fn peak(&self) -> usize {
        self.peak.get()
    }
}
