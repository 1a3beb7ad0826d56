//! Round-based message transport used by the DKG and signing drivers.
//!
//! A [`Channel`] offers a totally ordered broadcast plus point-to-point
//! private delivery. A round ends when the channel's logical timeout fires;
//! whatever was not delivered by then counts as silence.

/// 1-based participant position inside a configuration.
pub type Index = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrivateMessage {
    pub sender: Index,
    pub recipient: Index,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Delivery {
    /// Broadcasts in their agreed total order.
    pub broadcasts: Vec<(Index, Vec<u8>)>,
    pub private: Vec<PrivateMessage>,
}

pub trait Channel {
    fn broadcast(&mut self, sender: Index, payload: Vec<u8>);
    fn send_private(&mut self, sender: Index, recipient: Index, payload: Vec<u8>);
    /// Closes the current round and returns everything delivered during it.
    fn end_round(&mut self) -> Delivery;

    /// Like [`Channel::end_round`], but tells the channel whose broadcasts
    /// the round is waiting for. A channel with a logical clock may use it
    /// to close early or hold the round open until its timeout.
    fn end_round_expecting(&mut self, _expected: &[Index]) -> Delivery {
        self.end_round()
    }
}

/// In-memory channel: everything posted in a round is delivered at its end.
#[derive(Debug, Default)]
pub struct LocalChannel {
    pending: Delivery,
    rounds: usize,
}

impl LocalChannel {
    pub fn new() -> Self {
        LocalChannel::default()
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }
}

impl Channel for LocalChannel {
    fn broadcast(&mut self, sender: Index, payload: Vec<u8>) {
        self.pending.broadcasts.push((sender, payload));
    }

    fn send_private(&mut self, sender: Index, recipient: Index, payload: Vec<u8>) {
        self.pending.private.push(PrivateMessage {
            sender,
            recipient,
            payload,
        });
    }

    fn end_round(&mut self) -> Delivery {
        self.rounds += 1;
        std::mem::take(&mut self.pending)
    }
}
