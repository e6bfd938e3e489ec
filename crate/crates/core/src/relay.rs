use crate::error::{CoreError, Result};
use crate::message::{Message, Payload};

/// Tail-to-tail relay: hands each side the other side's categorical message.
///
/// Two modules that share a parent class variable cannot address each other
/// directly; the relay sits between them and swaps their posteriors verbatim.
pub fn ttot_relay(from_a: Message, from_b: Message) -> Result<(Message, Message)> {
    let (Payload::CategoricalPerDatum(pa), Payload::CategoricalPerDatum(pb)) =
        (&from_a.payload, &from_b.payload)
    else {
        return Err(CoreError::Dimension(format!(
            "relay expects categorical messages, got {} and {}",
            from_a.payload.kind(),
            from_b.payload.kind()
        )));
    };
    if pa.len() != pb.len() {
        return Err(CoreError::Dimension(format!(
            "relay messages cover {} and {} data points",
            pa.len(),
            pb.len()
        )));
    }
    if let (Some(a), Some(b)) = (pa.first(), pb.first()) {
        if a.len() != b.len() {
            return Err(CoreError::Dimension(format!(
                "relay messages have {} and {} classes",
                a.len(),
                b.len()
            )));
        }
    }
    Ok((from_b, from_a))
}
