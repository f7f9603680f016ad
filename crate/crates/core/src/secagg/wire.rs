//! Binary encodings of the protocol messages.
//!
//! Every message is `tag: u8 | body_len: u32 | body`. Integers are
//! little-endian, and variable-length fields carry their own `u32` length
//! prefix. The layouts are listed in `docs/wire-format.md`.

use super::{CompletingMessage, InitialMessage, MaskedUpdate, SecAggError, SeedEnvelope};

pub const SEED_ENVELOPE_TAG: u8 = 0x01;
pub const MASKED_UPDATE_TAG: u8 = 0x02;
pub const INITIAL_MESSAGE_TAG: u8 = 0x03;
pub const COMPLETING_MESSAGE_TAG: u8 = 0x04;
pub const PROCESS_REQUEST_TAG: u8 = 0x05;
pub const RELEASE_REQUEST_TAG: u8 = 0x06;
pub const UNMASK_VECTOR_TAG: u8 = 0x07;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) -> &mut Self {
        self.0.push(v);
        self
    }
    fn u32(&mut self, v: u32) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    fn u64(&mut self, v: u64) -> &mut Self {
        self.0.extend_from_slice(&v.to_le_bytes());
        self
    }
    fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(v.len() as u32);
        self.0.extend_from_slice(v);
        self
    }
}

fn frame(tag: u8, body: Writer) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.0.len() + 5);
    out.push(tag);
    out.extend_from_slice(&(body.0.len() as u32).to_le_bytes());
    out.extend_from_slice(&body.0);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SecAggError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.buf.len()).ok_or_else(|| {
            SecAggError::Malformed(format!("truncated: need {n} bytes at offset {}", self.pos))
        })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, SecAggError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, SecAggError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, SecAggError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn bytes(&mut self) -> Result<&'a [u8], SecAggError> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    fn fixed<const N: usize>(&mut self) -> Result<[u8; N], SecAggError> {
        let v = self.bytes()?;
        v.try_into().map_err(|_| SecAggError::Malformed(format!("expected {N}-byte field, got {}", v.len())))
    }
    fn finish(&self) -> Result<(), SecAggError> {
        if self.pos != self.buf.len() {
            return Err(SecAggError::Malformed(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn open(buf: &[u8], tag: u8) -> Result<Reader<'_>, SecAggError> {
    let mut outer = Reader { buf, pos: 0 };
    let found = outer.u8()?;
    if found != tag {
        return Err(SecAggError::Malformed(format!("expected tag {tag:#04x}, found {found:#04x}")));
    }
    let body = outer.bytes()?;
    outer.finish()?;
    Ok(Reader { buf: body, pos: 0 })
}

pub fn encode_seed_envelope(e: &SeedEnvelope) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.u32(e.slot_index).u64(e.sequence_number).bytes(&e.ciphertext).bytes(&e.mac);
    frame(SEED_ENVELOPE_TAG, w)
}

pub fn decode_seed_envelope(buf: &[u8]) -> Result<SeedEnvelope, SecAggError> {
    let mut r = open(buf, SEED_ENVELOPE_TAG)?;
    let slot_index = r.u32()?;
    let sequence_number = r.u64()?;
    let ciphertext = r.bytes()?.to_vec();
    let mac = r.fixed::<16>()?;
    r.finish()?;
    Ok(SeedEnvelope { ciphertext, mac, sequence_number, slot_index })
}

pub fn encode_masked_update(u: &MaskedUpdate, modulus_bits: u32) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(25 + 4 * u.masked_vector.len()));
    w.u32(u.slot_index).u64(u.initial_version).u64(u.num_examples).u8(modulus_bits as u8);
    w.u32(u.masked_vector.len() as u32);
    for x in &u.masked_vector {
        w.u32(*x);
    }
    frame(MASKED_UPDATE_TAG, w)
}

/// Decodes a masked update and returns it with its declared modulus bits.
pub fn decode_masked_update(buf: &[u8]) -> Result<(MaskedUpdate, u32), SecAggError> {
    let mut r = open(buf, MASKED_UPDATE_TAG)?;
    let slot_index = r.u32()?;
    let initial_version = r.u64()?;
    let num_examples = r.u64()?;
    let bits = r.u8()? as u32;
    if !(1..=32).contains(&bits) {
        return Err(SecAggError::Malformed(format!("modulus bits {bits}")));
    }
    let len = r.u32()? as usize;
    let limit = if bits == 32 { u64::MAX } else { 1u64 << bits };
    let mut masked_vector = Vec::with_capacity(len.min(r.buf.len() / 4));
    for _ in 0..len {
        let x = r.u32()?;
        if (x as u64) >= limit {
            return Err(SecAggError::Malformed(format!("element {x} outside Z_2^{bits}")));
        }
        masked_vector.push(x);
    }
    r.finish()?;
    Ok((MaskedUpdate { slot_index, masked_vector, num_examples, initial_version }, bits))
}

pub fn encode_initial_message(m: &InitialMessage) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.u32(m.index).bytes(&m.public_key).bytes(&m.signature);
    frame(INITIAL_MESSAGE_TAG, w)
}

pub fn decode_initial_message(buf: &[u8]) -> Result<InitialMessage, SecAggError> {
    let mut r = open(buf, INITIAL_MESSAGE_TAG)?;
    let index = r.u32()?;
    let public_key = r.fixed::<32>()?;
    let signature = r.fixed::<64>()?;
    r.finish()?;
    Ok(InitialMessage { index, public_key, signature })
}

pub fn encode_completing_message(m: &CompletingMessage) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.u32(m.index).bytes(&m.public_key);
    frame(COMPLETING_MESSAGE_TAG, w)
}

pub fn decode_completing_message(buf: &[u8]) -> Result<CompletingMessage, SecAggError> {
    let mut r = open(buf, COMPLETING_MESSAGE_TAG)?;
    let index = r.u32()?;
    let public_key = r.fixed::<32>()?;
    r.finish()?;
    Ok(CompletingMessage { index, public_key })
}

/// Server-to-trusted-party request carrying one client's completing message and envelope.
pub fn encode_process_request(completing: &CompletingMessage, envelope: &SeedEnvelope) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.bytes(&encode_completing_message(completing)).bytes(&encode_seed_envelope(envelope));
    frame(PROCESS_REQUEST_TAG, w)
}

pub fn decode_process_request(buf: &[u8]) -> Result<(CompletingMessage, SeedEnvelope), SecAggError> {
    let mut r = open(buf, PROCESS_REQUEST_TAG)?;
    let completing = decode_completing_message(r.bytes()?)?;
    let envelope = decode_seed_envelope(r.bytes()?)?;
    r.finish()?;
    Ok((completing, envelope))
}

pub fn encode_release_request() -> Vec<u8> {
    frame(RELEASE_REQUEST_TAG, Writer(Vec::new()))
}

pub fn decode_release_request(buf: &[u8]) -> Result<(), SecAggError> {
    open(buf, RELEASE_REQUEST_TAG)?.finish()
}

pub fn encode_unmask_vector(v: &[u32]) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(4 + 4 * v.len()));
    w.u32(v.len() as u32);
    for x in v {
        w.u32(*x);
    }
    frame(UNMASK_VECTOR_TAG, w)
}

pub fn decode_unmask_vector(buf: &[u8]) -> Result<Vec<u32>, SecAggError> {
    let mut r = open(buf, UNMASK_VECTOR_TAG)?;
    let len = r.u32()? as usize;
    let mut out = Vec::with_capacity(len.min(r.buf.len() / 4));
    for _ in 0..len {
        out.push(r.u32()?);
    }
    r.finish()?;
    Ok(out)
}
