use super::sbi_codec;
use super::{
    DecodeError, EncodeError, ErrorBody, ErrorCode, HelloBody, Message, MessageHeader, MsgType,
    Payload, ProtocolOffer, HEADER_LEN, MAX_PAYLOAD, VERSION,
};
use crate::sbi::{DatapathId, ModuleId, Xid};

/// Encodes `msg` as a header followed by its payload.
pub fn encode_message(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    let payload = encode_payload(msg)?;
    if payload.len() > MAX_PAYLOAD {
        return Err(EncodeError::PayloadTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.push(VERSION);
    out.push(msg.msg_type() as u8);
    out.extend_from_slice(&(payload.len() as u16).to_be_bytes());
    out.extend_from_slice(&msg.xid.0.to_be_bytes());
    out.extend_from_slice(&msg.module_id.0.to_be_bytes());
    out.extend_from_slice(&msg.datapath_id.0.to_be_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

fn encode_payload(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    let invalid = |s: &str| EncodeError::Invalid(s.to_string());
    Ok(match &msg.payload {
        Payload::Hello(body) => {
            if !body.is_duplicate_free() {
                return Err(invalid("hello offers contain duplicates"));
            }
            if body.offered.len() > u8::MAX as usize {
                return Err(invalid("more than 255 hello offers"));
            }
            let mut out = vec![body.offered.len() as u8];
            for o in &body.offered {
                out.push(o.protocol_id);
                out.push(o.version);
            }
            out
        }
        Payload::Error(ErrorBody { code, text }) => {
            let mut out = code.0.to_be_bytes().to_vec();
            out.extend_from_slice(text.as_bytes());
            out
        }
        Payload::ModuleAnnouncement { name } | Payload::ModuleAcknowledge { name } => {
            if name.is_empty() {
                return Err(invalid("empty module name"));
            }
            name.as_bytes().to_vec()
        }
        Payload::Fence => Vec::new(),
        Payload::Sbi(sbi) => {
            sbi.validate()
                .map_err(|e| EncodeError::Invalid(e.to_string()))?;
            if sbi.datapath() != msg.datapath_id {
                return Err(invalid("header datapath differs from SBI datapath"));
            }
            sbi_codec::encode_sbi(sbi)
        }
    })
}

/// Parses the fixed header. Fails with `NeedMoreData(20)` on a short buffer.
pub fn decode_header(bytes: &[u8]) -> Result<MessageHeader, DecodeError> {
    if bytes.len() < HEADER_LEN {
        return Err(DecodeError::NeedMoreData {
            expected: HEADER_LEN,
        });
    }
    let version = bytes[0];
    if version != VERSION {
        return Err(DecodeError::protocol(format!(
            "unsupported version 0x{version:02x}"
        )));
    }
    let msg_type = MsgType::from_u8(bytes[1]).ok_or_else(|| {
        DecodeError::protocol(format!("unknown message type 0x{:02x}", bytes[1]))
    })?;
    let be32 = |at: usize| u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap());
    Ok(MessageHeader {
        version,
        msg_type,
        payload_length: u16::from_be_bytes([bytes[2], bytes[3]]),
        xid: Xid(be32(4)),
        module_id: ModuleId(be32(8)),
        datapath_id: DatapathId(u64::from_be_bytes(bytes[12..20].try_into().unwrap())),
    })
}

/// Decodes one frame from the front of `bytes`, returning it together with
/// the number of bytes it occupied. Bytes past the frame are not examined.
pub fn decode_message(bytes: &[u8]) -> Result<(Message, usize), DecodeError> {
    let header = decode_header(bytes)?;
    let total = HEADER_LEN + header.payload_length as usize;
    if bytes.len() < total {
        return Err(DecodeError::NeedMoreData { expected: total });
    }
    let body = &bytes[HEADER_LEN..total];
    let payload = match header.msg_type {
        MsgType::Hello => Payload::Hello(decode_hello(body)?),
        MsgType::Error => {
            if body.len() < 2 {
                return Err(DecodeError::protocol("error payload shorter than 2 bytes"));
            }
            Payload::Error(ErrorBody {
                code: ErrorCode(u16::from_be_bytes([body[0], body[1]])),
                text: utf8(&body[2..])?,
            })
        }
        MsgType::ModuleAnnouncement => Payload::ModuleAnnouncement {
            name: module_name(body)?,
        },
        MsgType::ModuleAcknowledge => Payload::ModuleAcknowledge {
            name: module_name(body)?,
        },
        MsgType::Fence => {
            if !body.is_empty() {
                return Err(DecodeError::protocol("fence carries a payload"));
            }
            Payload::Fence
        }
        MsgType::Sbi => {
            if header.datapath_id.0 == 0 {
                return Err(DecodeError::protocol("SBI frame with datapath 0"));
            }
            Payload::Sbi(sbi_codec::decode_sbi(body, header.datapath_id)?)
        }
    };
    let msg = Message {
        xid: header.xid,
        module_id: header.module_id,
        datapath_id: header.datapath_id,
        payload,
    };
    Ok((msg, total))
}

fn decode_hello(body: &[u8]) -> Result<HelloBody, DecodeError> {
    let (&count, rest) = body
        .split_first()
        .ok_or_else(|| DecodeError::protocol("empty hello payload"))?;
    if rest.len() != count as usize * 2 {
        return Err(DecodeError::protocol(format!(
            "hello declares {count} offers but carries {} bytes",
            rest.len()
        )));
    }
    let hello = HelloBody::new(
        rest.chunks_exact(2)
            .map(|c| ProtocolOffer::new(c[0], c[1]))
            .collect(),
    );
    if !hello.is_duplicate_free() {
        return Err(DecodeError::protocol("hello offers contain duplicates"));
    }
    Ok(hello)
}

fn utf8(bytes: &[u8]) -> Result<String, DecodeError> {
    String::from_utf8(bytes.to_vec()).map_err(|_| DecodeError::protocol("invalid UTF-8"))
}

fn module_name(bytes: &[u8]) -> Result<String, DecodeError> {
    if bytes.is_empty() {
        return Err(DecodeError::protocol("empty module name"));
    }
    utf8(bytes)
}
