//! Deterministic simulated proof-of-work UTXO ledger.
//!
//! Stands in for Bitcoin: heights, key-path spend validation, `OP_RETURN`
//! outputs, absolute-height refund timelocks and confirmation depth. There
//! is no proof of work and no reorg; a confirmed transaction never moves.
//!
//! The transaction id is the tagged hash of the witness-free body and is
//! also the message every witness signs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::Writer;
use crate::crypto::{schnorr_verify, tagged_hash, GroupPoint, Hash32, HashTag, SchnorrSignature};
use crate::taproot::verify_key_path;

pub const DEFAULT_FEE: u64 = 200;
pub const OP_RETURN_CAPACITY: usize = 80;
pub const LEDGER_DUMP_FORMAT: &str = "pikachu-ledger";
pub const LEDGER_DUMP_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Outpoint {
    pub txid: Hash32,
    pub vout: u32,
}

impl std::fmt::Display for Outpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.txid, self.vout)
    }
}

/// Refund branch: `owner` may spend once the spending block's height is at
/// least `release_height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Refund {
    pub owner: GroupPoint,
    pub release_height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum Destination {
    /// Key-path spendable output, optionally with a timelocked refund branch.
    Key {
        key: GroupPoint,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        refund: Option<Refund>,
    },
    OpReturn {
        #[serde(with = "crate::codec::hex_bytes")]
        data: Vec<u8>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxOutput {
    pub amount: u64,
    #[serde(flatten)]
    pub destination: Destination,
}

impl TxOutput {
    pub fn to_key(amount: u64, key: GroupPoint) -> Self {
        TxOutput {
            amount,
            destination: Destination::Key { key, refund: None },
        }
    }

    pub fn op_return(data: Vec<u8>) -> Self {
        TxOutput {
            amount: 0,
            destination: Destination::OpReturn { data },
        }
    }

    pub fn key(&self) -> Option<&GroupPoint> {
        match &self.destination {
            Destination::Key { key, .. } => Some(key),
            Destination::OpReturn { .. } => None,
        }
    }

    pub fn op_return_data(&self) -> Option<&[u8]> {
        match &self.destination {
            Destination::OpReturn { data } => Some(data),
            Destination::Key { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerTx {
    /// Set on minting transactions only; makes their ids unique.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coinbase: Option<u64>,
    pub inputs: Vec<Outpoint>,
    pub outputs: Vec<TxOutput>,
    pub witnesses: Vec<SchnorrSignature>,
}

impl LedgerTx {
    pub fn unsigned(inputs: Vec<Outpoint>, outputs: Vec<TxOutput>) -> Self {
        LedgerTx {
            coinbase: None,
            inputs,
            outputs,
            witnesses: Vec::new(),
        }
    }

    /// Canonical body encoding; witnesses excluded.
    pub fn body_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        match self.coinbase {
            Some(nonce) => w.u8(1).u64(nonce),
            None => w.u8(0),
        };
        w.u32(self.inputs.len() as u32);
        for i in &self.inputs {
            w.hash(&i.txid).u32(i.vout);
        }
        w.u32(self.outputs.len() as u32);
        for o in &self.outputs {
            w.u64(o.amount);
            match &o.destination {
                Destination::Key { key, refund } => {
                    w.u8(0).point(key);
                    match refund {
                        Some(r) => w.u8(1).point(&r.owner).u64(r.release_height),
                        None => w.u8(0),
                    };
                }
                Destination::OpReturn { data } => {
                    w.u8(1).bytes(data);
                }
            }
        }
        w.finish()
    }

    /// Transaction id, which is also the signed digest.
    pub fn id(&self) -> Hash32 {
        tagged_hash(HashTag::TxId, &self.body_bytes())
    }

    pub fn digest(&self) -> Hash32 {
        self.id()
    }

    pub fn output_sum(&self) -> u64 {
        self.outputs.iter().map(|o| o.amount).sum()
    }

    pub fn outpoint(&self, vout: u32) -> Outpoint {
        Outpoint {
            txid: self.id(),
            vout,
        }
    }

    pub fn op_return(&self) -> Option<&[u8]> {
        self.outputs.iter().find_map(|o| o.op_return_data())
    }

    pub fn with_witness(mut self, sig: SchnorrSignature) -> Self {
        self.witnesses = vec![sig; self.inputs.len()];
        self
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "reason")]
pub enum Rejection {
    #[error("bad-signature on input {input}")]
    BadSignature { input: usize },
    #[error("double-spend of {outpoint}")]
    DoubleSpend { outpoint: Outpoint },
    #[error("overspend: inputs {inputs} < outputs {outputs}")]
    Overspend { inputs: u64, outputs: u64 },
    #[error("premature-timelock: spendable from height {release}, block height would be {height}")]
    PrematureTimelock { release: u64, height: u64 },
    #[error("unknown-input {outpoint}")]
    UnknownInput { outpoint: Outpoint },
    #[error("witness count {witnesses} does not match input count {inputs}")]
    WitnessCount { inputs: usize, witnesses: usize },
    #[error("op-return output invalid: carries value or exceeds {OP_RETURN_CAPACITY} bytes")]
    BadOpReturn,
    #[error("transaction has no inputs")]
    NoInputs,
}

impl Rejection {
    pub fn code(&self) -> &'static str {
        match self {
            Rejection::BadSignature { .. } => "bad-signature",
            Rejection::DoubleSpend { .. } => "double-spend",
            Rejection::Overspend { .. } => "overspend",
            Rejection::PrematureTimelock { .. } => "premature-timelock",
            Rejection::UnknownInput { .. } => "unknown-input",
            Rejection::WitnessCount { .. } => "witness-count",
            Rejection::BadOpReturn => "bad-op-return",
            Rejection::NoInputs => "no-inputs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Submission {
    Accepted(Hash32),
    /// Byte-identical to a transaction already pending; treated as the same.
    Duplicate(Hash32),
}

impl Submission {
    pub fn txid(&self) -> Hash32 {
        match self {
            Submission::Accepted(id) | Submission::Duplicate(id) => *id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UtxoEntry {
    pub output: TxOutput,
    pub height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerBlock {
    pub height: u64,
    pub txs: Vec<LedgerTx>,
}

/// The operations a protocol participant or verifier needs from a ledger.
/// [`SimChain`] is the only implementation; a real-node adapter would plug
/// in here.
pub trait LedgerBackend {
    fn submit(&mut self, tx: LedgerTx) -> Result<Submission, Rejection>;
    fn mine_block(&mut self) -> u64;
    fn height(&self) -> u64;
    fn get_tx(&self, txid: &Hash32) -> Option<&LedgerTx>;
    fn confirmation_height(&self, txid: &Hash32) -> Option<u64>;
    fn find_spending_tx(&self, outpoint: &Outpoint) -> Option<&LedgerTx>;
    fn outputs_to(&self, key: &GroupPoint, before_height: Option<u64>) -> Vec<&LedgerTx>;
    fn utxo(&self, outpoint: &Outpoint) -> Option<&UtxoEntry>;
}

#[derive(Debug, Clone)]
pub struct SimChain {
    blocks: Vec<LedgerBlock>,
    utxos: BTreeMap<Outpoint, UtxoEntry>,
    spent_by: BTreeMap<Outpoint, Hash32>,
    locations: BTreeMap<Hash32, (u64, usize)>,
    mempool: Vec<LedgerTx>,
    mempool_spends: BTreeMap<Outpoint, Hash32>,
    settlement_depth: u64,
    minted: u64,
    fees: u64,
    coinbase_counter: u64,
}

impl Default for SimChain {
    fn default() -> Self {
        SimChain::new(6)
    }
}

impl SimChain {
    /// A ledger with an empty genesis block at height 0.
    pub fn new(settlement_depth: u64) -> Self {
        SimChain {
            blocks: vec![LedgerBlock {
                height: 0,
                txs: Vec::new(),
            }],
            utxos: BTreeMap::new(),
            spent_by: BTreeMap::new(),
            locations: BTreeMap::new(),
            mempool: Vec::new(),
            mempool_spends: BTreeMap::new(),
            settlement_depth,
            minted: 0,
            fees: 0,
            coinbase_counter: 0,
        }
    }

    pub fn settlement_depth(&self) -> u64 {
        self.settlement_depth
    }

    pub fn blocks(&self) -> &[LedgerBlock] {
        &self.blocks
    }

    pub fn mempool(&self) -> &[LedgerTx] {
        &self.mempool
    }

    pub fn total_minted(&self) -> u64 {
        self.minted
    }

    pub fn total_fees(&self) -> u64 {
        self.fees
    }

    pub fn utxo_total(&self) -> u64 {
        self.utxos.values().map(|u| u.output.amount).sum()
    }

    /// Minted coins are either unspent or paid as fees.
    pub fn conservation_holds(&self) -> bool {
        self.minted == self.utxo_total() + self.fees
    }

    /// Queues a minting transaction paying `amount` to `key`.
    pub fn mint(&mut self, key: GroupPoint, amount: u64) -> Outpoint {
        let tx = LedgerTx {
            coinbase: Some(self.coinbase_counter),
            inputs: Vec::new(),
            outputs: vec![TxOutput::to_key(amount, key)],
            witnesses: Vec::new(),
        };
        self.coinbase_counter += 1;
        let op = tx.outpoint(0);
        self.mempool.push(tx);
        op
    }

    /// A transaction confirmed at `h` is final once the tip reaches `h + k`.
    pub fn is_final(&self, txid: &Hash32) -> bool {
        self.confirmation_height(txid)
            .is_some_and(|h| self.height() >= h + self.settlement_depth)
    }

    pub fn is_pending(&self, txid: &Hash32) -> bool {
        self.mempool.iter().any(|t| t.id() == *txid)
    }

    pub fn unspent_outputs_to(&self, key: &GroupPoint) -> Vec<(Outpoint, &UtxoEntry)> {
        self.utxos
            .iter()
            .filter(|(_, u)| u.output.key() == Some(key))
            .map(|(o, u)| (*o, u))
            .collect()
    }

    fn validate(&self, tx: &LedgerTx) -> Result<(), Rejection> {
        for o in &tx.outputs {
            if let Destination::OpReturn { data } = &o.destination {
                if o.amount != 0 || data.len() > OP_RETURN_CAPACITY {
                    return Err(Rejection::BadOpReturn);
                }
            }
        }
        if tx.coinbase.is_some() {
            return Ok(());
        }
        if tx.inputs.is_empty() {
            return Err(Rejection::NoInputs);
        }
        if tx.witnesses.len() != tx.inputs.len() {
            return Err(Rejection::WitnessCount {
                inputs: tx.inputs.len(),
                witnesses: tx.witnesses.len(),
            });
        }
        let digest = tx.digest();
        let inclusion_height = self.height() + 1;
        let mut input_sum = 0u64;
        for (pos, (outpoint, witness)) in tx.inputs.iter().zip(&tx.witnesses).enumerate() {
            if tx.inputs[..pos].contains(outpoint)
                || self.spent_by.contains_key(outpoint)
                || self.mempool_spends.contains_key(outpoint)
            {
                return Err(Rejection::DoubleSpend {
                    outpoint: *outpoint,
                });
            }
            let entry = self.utxos.get(outpoint).ok_or(Rejection::UnknownInput {
                outpoint: *outpoint,
            })?;
            match &entry.output.destination {
                Destination::OpReturn { .. } => {
                    return Err(Rejection::UnknownInput {
                        outpoint: *outpoint,
                    })
                }
                Destination::Key { key, refund } => {
                    if !verify_key_path(key, digest.as_bytes(), witness) {
                        match refund {
                            Some(r) if schnorr_verify(&r.owner, digest.as_bytes(), witness) => {
                                if inclusion_height < r.release_height {
                                    return Err(Rejection::PrematureTimelock {
                                        release: r.release_height,
                                        height: inclusion_height,
                                    });
                                }
                            }
                            _ => return Err(Rejection::BadSignature { input: pos }),
                        }
                    }
                }
            }
            input_sum += entry.output.amount;
        }
        let output_sum = tx.output_sum();
        if output_sum > input_sum {
            return Err(Rejection::Overspend {
                inputs: input_sum,
                outputs: output_sum,
            });
        }
        Ok(())
    }

    /// Serializable snapshot: confirmed blocks plus the pending pool.
    pub fn dump(&self) -> LedgerDump {
        LedgerDump {
            format: LEDGER_DUMP_FORMAT.to_string(),
            version: LEDGER_DUMP_VERSION,
            settlement_depth: self.settlement_depth,
            blocks: self.blocks[1..].to_vec(),
            mempool: self.mempool.clone(),
        }
    }

    /// Rebuilds a ledger by replaying and revalidating a dump.
    pub fn load(dump: &LedgerDump) -> Result<Self, LedgerLoadError> {
        if dump.format != LEDGER_DUMP_FORMAT || dump.version != LEDGER_DUMP_VERSION {
            return Err(LedgerLoadError::Header {
                format: dump.format.clone(),
                version: dump.version,
            });
        }
        let mut chain = SimChain::new(dump.settlement_depth);
        for block in &dump.blocks {
            if block.height != chain.height() + 1 {
                return Err(LedgerLoadError::HeightGap {
                    expected: chain.height() + 1,
                    got: block.height,
                });
            }
            for tx in &block.txs {
                chain.replay_submit(tx.clone(), block.height)?;
            }
            chain.mine_block();
        }
        for tx in &dump.mempool {
            chain.replay_submit(tx.clone(), chain.height() + 1)?;
        }
        Ok(chain)
    }

    fn replay_submit(&mut self, tx: LedgerTx, height: u64) -> Result<(), LedgerLoadError> {
        if let Some(n) = tx.coinbase {
            self.coinbase_counter = self.coinbase_counter.max(n + 1);
            self.mempool.push(tx);
            return Ok(());
        }
        self.submit(tx)
            .map(|_| ())
            .map_err(|rejection| LedgerLoadError::Invalid { height, rejection })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.dump()).expect("ledger dump serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, LedgerLoadError> {
        let dump: LedgerDump =
            serde_json::from_str(text).map_err(|e| LedgerLoadError::Parse(e.to_string()))?;
        SimChain::load(&dump)
    }
}

impl LedgerBackend for SimChain {
    fn submit(&mut self, tx: LedgerTx) -> Result<Submission, Rejection> {
        let id = tx.id();
        if self.mempool.contains(&tx) {
            return Ok(Submission::Duplicate(id));
        }
        self.validate(&tx)?;
        for input in &tx.inputs {
            self.mempool_spends.insert(*input, id);
        }
        self.mempool.push(tx);
        Ok(Submission::Accepted(id))
    }

    fn mine_block(&mut self) -> u64 {
        let height = self.height() + 1;
        let txs = std::mem::take(&mut self.mempool);
        self.mempool_spends.clear();
        for (pos, tx) in txs.iter().enumerate() {
            let id = tx.id();
            let mut input_sum = 0;
            for input in &tx.inputs {
                let entry = self.utxos.remove(input).expect("validated on submit");
                input_sum += entry.output.amount;
                self.spent_by.insert(*input, id);
            }
            if tx.coinbase.is_some() {
                self.minted += tx.output_sum();
            } else {
                self.fees += input_sum - tx.output_sum();
            }
            for (vout, output) in tx.outputs.iter().enumerate() {
                if output.op_return_data().is_some() {
                    continue;
                }
                self.utxos.insert(
                    Outpoint {
                        txid: id,
                        vout: vout as u32,
                    },
                    UtxoEntry {
                        output: output.clone(),
                        height,
                    },
                );
            }
            self.locations.insert(id, (height, pos));
        }
        self.blocks.push(LedgerBlock { height, txs });
        height
    }

    fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    fn get_tx(&self, txid: &Hash32) -> Option<&LedgerTx> {
        let (h, pos) = self.locations.get(txid)?;
        self.blocks[*h as usize].txs.get(*pos)
    }

    fn confirmation_height(&self, txid: &Hash32) -> Option<u64> {
        self.locations.get(txid).map(|(h, _)| *h)
    }

    fn find_spending_tx(&self, outpoint: &Outpoint) -> Option<&LedgerTx> {
        self.get_tx(self.spent_by.get(outpoint)?)
    }

    fn outputs_to(&self, key: &GroupPoint, before_height: Option<u64>) -> Vec<&LedgerTx> {
        self.blocks
            .iter()
            .filter(|b| before_height.is_none_or(|h| b.height < h))
            .flat_map(|b| b.txs.iter())
            .filter(|tx| tx.outputs.iter().any(|o| o.key() == Some(key)))
            .collect()
    }

    fn utxo(&self, outpoint: &Outpoint) -> Option<&UtxoEntry> {
        self.utxos.get(outpoint)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerDump {
    pub format: String,
    pub version: u32,
    pub settlement_depth: u64,
    pub blocks: Vec<LedgerBlock>,
    #[serde(default)]
    pub mempool: Vec<LedgerTx>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerLoadError {
    #[error("unsupported ledger dump header {format:?} v{version}")]
    Header { format: String, version: u32 },
    #[error("block height {got} where {expected} was expected")]
    HeightGap { expected: u64, got: u64 },
    #[error("transaction in block {height} fails validation: {rejection}")]
    Invalid { height: u64, rejection: Rejection },
    #[error("malformed ledger dump: {0}")]
    Parse(String),
}
