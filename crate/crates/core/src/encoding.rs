//! Canonical byte encoding.
//!
//! Every record is laid out as
//!
//! ```text
//! tag (1 byte) ‖ field count (u32_be) ‖ { field length (u32_be) ‖ field bytes }*
//! ```
//!
//! Lists inside a field are `count (u32_be) ‖ element*`, where each element is
//! itself a self-delimiting record (or a length-prefixed byte string). Types
//! whose lists are semantically sets keep them sorted, and decoding rejects
//! unsorted input, so `encode(decode(b)) == b` for every accepted `b`.
//!
//! Integers are big-endian and fixed width. Optional fields are `0x00` when
//! absent and `0x01 ‖ bytes` when present.

use std::fmt;

use thiserror::Error;

/// Record tags. One byte, unique per encoded type (or enum variant).
pub mod tag {
    pub const INDEX: u8 = 0x01;
    pub const POSITION: u8 = 0x02;
    pub const ACL_ITEM: u8 = 0x04;
    pub const DHT_VALUE: u8 = 0x05;
    pub const DATA: u8 = 0x06;

    pub const IDENTITY_PK: u8 = 0x10;
    pub const IDENTITY_ZKP: u8 = 0x11;
    pub const IDENTITY_OTH: u8 = 0x12;

    pub const PROOF_ENROLL: u8 = 0x18;
    pub const PROOF_PK: u8 = 0x19;
    pub const PROOF_ZKP_COMMIT: u8 = 0x1a;
    pub const PROOF_ZKP_RESPONSE: u8 = 0x1b;
    pub const PROOF_OTH: u8 = 0x1c;

    pub const STATE_PK: u8 = 0x20;
    pub const STATE_ZKP: u8 = 0x21;
    pub const STATE_OTH: u8 = 0x22;
    pub const PENDING_CHALLENGE: u8 = 0x23;

    pub const ACL_CHANGE: u8 = 0x28;
    pub const ACL_DELTA: u8 = 0x29;
    pub const INTENT: u8 = 0x2a;
    pub const GET_REQUEST: u8 = 0x2b;

    pub const REQUEST_PUT: u8 = 0x30;
    pub const REQUEST_GET: u8 = 0x31;
    pub const REQUEST_SET: u8 = 0x32;
    pub const REQUEST_ZKP_BEGIN: u8 = 0x33;

    pub const DECISION: u8 = 0x38;
    pub const STORED_ENTRY: u8 = 0x3c;
    pub const PEER_STORE: u8 = 0x3d;
}

/// Length of the record header: tag plus field count.
pub const RECORD_HEADER_LEN: usize = 5;
/// Length of each field's length prefix.
pub const FIELD_HEADER_LEN: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("unexpected tag {found:#04x}, expected {expected}")]
    UnexpectedTag { found: u8, expected: &'static str },
    #[error("record {tag:#04x} has {found} fields, expected {expected}")]
    FieldCount { tag: u8, found: u32, expected: u32 },
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("list elements are not in canonical order")]
    NotSorted,
    #[error("invalid value: {0}")]
    Invalid(&'static str),
}

/// Deterministic serialization of a domain value.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CanonicalBytes(Vec<u8>);

impl CanonicalBytes {
    /// Encodes an ad-hoc record that has no dedicated type.
    pub fn record(tag: u8, field_count: u32, build: impl FnOnce(&mut RecordWriter<'_>)) -> Self {
        let mut out = Vec::new();
        let mut w = RecordWriter::begin(&mut out, tag, field_count);
        build(&mut w);
        w.finish();
        CanonicalBytes(out)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[u8]> for CanonicalBytes {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for CanonicalBytes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CanonicalBytes({} bytes)", self.0.len())
    }
}

pub trait Canonical: Sized {
    fn encode_into(&self, out: &mut Vec<u8>);

    fn decode_from(reader: &mut Reader<'_>) -> Result<Self, DecodeError>;

    fn canonical(&self) -> CanonicalBytes {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        CanonicalBytes(out)
    }

    fn encoded_len(&self) -> usize {
        self.canonical().len()
    }

    /// Decodes exactly one value, rejecting trailing bytes.
    fn from_canonical(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut reader = Reader::new(bytes);
        let value = Self::decode_from(&mut reader)?;
        reader.finish()?;
        Ok(value)
    }
}

/// Writes one record. Every declared field must be written before `finish`.
pub struct RecordWriter<'a> {
    out: &'a mut Vec<u8>,
    remaining: u32,
}

impl<'a> RecordWriter<'a> {
    pub fn begin(out: &'a mut Vec<u8>, tag: u8, field_count: u32) -> Self {
        out.push(tag);
        out.extend_from_slice(&field_count.to_be_bytes());
        RecordWriter {
            out,
            remaining: field_count,
        }
    }

    fn push_field(&mut self, bytes: &[u8]) {
        assert!(self.remaining > 0, "record field count exceeded");
        self.remaining -= 1;
        self.out
            .extend_from_slice(&(bytes.len() as u32).to_be_bytes());
        self.out.extend_from_slice(bytes);
    }

    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        self.push_field(bytes);
        self
    }

    pub fn u8(&mut self, value: u8) -> &mut Self {
        self.push_field(&[value]);
        self
    }

    pub fn u32(&mut self, value: u32) -> &mut Self {
        self.push_field(&value.to_be_bytes());
        self
    }

    pub fn u64(&mut self, value: u64) -> &mut Self {
        self.push_field(&value.to_be_bytes());
        self
    }

    pub fn nested<T: Canonical>(&mut self, value: &T) -> &mut Self {
        let mut buf = Vec::new();
        value.encode_into(&mut buf);
        self.push_field(&buf);
        self
    }

    pub fn option_bytes(&mut self, value: Option<&[u8]>) -> &mut Self {
        match value {
            None => self.push_field(&[0]),
            Some(bytes) => {
                let mut buf = Vec::with_capacity(bytes.len() + 1);
                buf.push(1);
                buf.extend_from_slice(bytes);
                self.push_field(&buf);
            }
        }
        self
    }

    pub fn option_nested<T: Canonical>(&mut self, value: Option<&T>) -> &mut Self {
        match value {
            None => self.push_field(&[0]),
            Some(v) => {
                let mut buf = vec![1];
                v.encode_into(&mut buf);
                self.push_field(&buf);
            }
        }
        self
    }

    /// Records in the given order. Callers that need set semantics sort first.
    pub fn list<'b, T: Canonical + 'b>(&mut self, items: impl IntoIterator<Item = &'b T>) -> &mut Self {
        let mut buf = vec![0u8; 4];
        let mut count: u32 = 0;
        for item in items {
            item.encode_into(&mut buf);
            count += 1;
        }
        buf[..4].copy_from_slice(&count.to_be_bytes());
        self.push_field(&buf);
        self
    }

    /// Length-prefixed byte strings in the given order.
    pub fn byte_list<'b>(&mut self, items: impl IntoIterator<Item = &'b [u8]>) -> &mut Self {
        let mut buf = vec![0u8; 4];
        let mut count: u32 = 0;
        for item in items {
            buf.extend_from_slice(&(item.len() as u32).to_be_bytes());
            buf.extend_from_slice(item);
            count += 1;
        }
        buf[..4].copy_from_slice(&count.to_be_bytes());
        self.push_field(&buf);
        self
    }

    pub fn finish(self) {
        assert_eq!(self.remaining, 0, "record is missing fields");
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, len: usize) -> Result<&'a [u8], DecodeError> {
        let end = self.pos.checked_add(len).ok_or(DecodeError::UnexpectedEnd)?;
        if end > self.buf.len() {
            return Err(DecodeError::UnexpectedEnd);
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn take_u32(&mut self) -> Result<u32, DecodeError> {
        let bytes = self.take(4)?;
        Ok(u32::from_be_bytes(bytes.try_into().unwrap()))
    }

    pub fn peek_tag(&self) -> Result<u8, DecodeError> {
        self.buf.get(self.pos).copied().ok_or(DecodeError::UnexpectedEnd)
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    /// Opens a record whose tag must be one of the accepted tags.
    pub fn record(
        &mut self,
        accepted: &[u8],
        expected: &'static str,
        field_count: u32,
    ) -> Result<RecordReader<'a>, DecodeError> {
        let tag = self.take(1)?[0];
        if !accepted.contains(&tag) {
            return Err(DecodeError::UnexpectedTag { found: tag, expected });
        }
        let count = self.take_u32()?;
        if count != field_count {
            return Err(DecodeError::FieldCount {
                tag,
                found: count,
                expected: field_count,
            });
        }
        let mut fields = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = self.take_u32()? as usize;
            fields.push(self.take(len)?);
        }
        Ok(RecordReader {
            tag,
            fields,
            next: 0,
        })
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}

pub struct RecordReader<'a> {
    tag: u8,
    fields: Vec<&'a [u8]>,
    next: usize,
}

impl<'a> RecordReader<'a> {
    pub fn tag(&self) -> u8 {
        self.tag
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let field = self
            .fields
            .get(self.next)
            .copied()
            .ok_or(DecodeError::UnexpectedEnd)?;
        self.next += 1;
        Ok(field)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        self.bytes()?
            .try_into()
            .map_err(|_| DecodeError::Invalid("fixed-width field has wrong length"))
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn nested<T: Canonical>(&mut self) -> Result<T, DecodeError> {
        T::from_canonical(self.bytes()?)
    }

    pub fn option_bytes(&mut self) -> Result<Option<&'a [u8]>, DecodeError> {
        let field = self.bytes()?;
        match field.split_first() {
            Some((0, [])) => Ok(None),
            Some((1, rest)) => Ok(Some(rest)),
            _ => Err(DecodeError::Invalid("malformed optional field")),
        }
    }

    pub fn option_nested<T: Canonical>(&mut self) -> Result<Option<T>, DecodeError> {
        let field = self.bytes()?;
        match field.split_first() {
            Some((0, [])) => Ok(None),
            Some((1, rest)) => Ok(Some(T::from_canonical(rest)?)),
            _ => Err(DecodeError::Invalid("malformed optional field")),
        }
    }

    pub fn list<T: Canonical>(&mut self) -> Result<Vec<T>, DecodeError> {
        let mut reader = Reader::new(self.bytes()?);
        let count = reader.take_u32()?;
        let mut items = Vec::with_capacity(count.min(1024) as usize);
        for _ in 0..count {
            items.push(T::decode_from(&mut reader)?);
        }
        reader.finish()?;
        Ok(items)
    }

    pub fn byte_list(&mut self) -> Result<Vec<&'a [u8]>, DecodeError> {
        let mut reader = Reader::new(self.bytes()?);
        let count = reader.take_u32()?;
        let mut items = Vec::with_capacity(count.min(1024) as usize);
        for _ in 0..count {
            let len = reader.take_u32()? as usize;
            items.push(reader.take(len)?);
        }
        reader.finish()?;
        Ok(items)
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        if self.next != self.fields.len() {
            return Err(DecodeError::Invalid("unread record fields"));
        }
        Ok(())
    }
}

/// Wire size of a record with the given field payload lengths.
pub fn record_len(field_lens: &[usize]) -> usize {
    RECORD_HEADER_LEN + field_lens.iter().map(|l| FIELD_HEADER_LEN + l).sum::<usize>()
}
