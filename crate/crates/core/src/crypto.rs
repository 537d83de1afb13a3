//! Digests, keys and the pluggable signature scheme.
//!
//! The default [`KeyedHashScheme`] is a deterministic stand-in: every actor's
//! secret is derived from a scheme-wide master secret, public keys are hashes
//! of those secrets, and signatures are HMAC-SHA256 tags. Only code holding the
//! scheme can sign, which is the property the ledger relies on. A deployment
//! would swap in a public-key scheme behind the same trait.

use std::collections::BTreeMap;
use std::fmt;

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::codec::{Canonical, DecodeError, Decoder, Encoder};

type HmacSha256 = Hmac<Sha256>;

/// A SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest32(pub [u8; 32]);

impl Digest32 {
    pub const ZERO: Digest32 = Digest32([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out)?;
        Ok(Self(out))
    }
}

impl fmt::Debug for Digest32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest32({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for Digest32 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for Digest32 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest32 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest32::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

impl Canonical for Digest32 {
    fn encode(&self, enc: &mut Encoder) {
        enc.raw(&self.0);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.raw().map(Digest32)
    }
}

pub fn sha256(data: &[u8]) -> Digest32 {
    Digest32(Sha256::digest(data).into())
}

/// Hash of a domain tag followed by each part, with no separators; callers
/// pass canonical encodings so the parts are self-delimiting.
pub fn sha256_tagged(tag: &[u8], parts: &[&[u8]]) -> Digest32 {
    let mut h = Sha256::new();
    h.update(tag);
    for p in parts {
        h.update(p);
    }
    Digest32(h.finalize().into())
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; 32]);

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", &hex::encode(self.0)[..16])
    }
}

impl Serialize for PublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(self.0))
    }
}

impl<'de> Deserialize<'de> for PublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        let mut out = [0u8; 32];
        hex::decode_to_slice(&s, &mut out).map_err(serde::de::Error::custom)?;
        Ok(PublicKey(out))
    }
}

impl Canonical for PublicKey {
    fn encode(&self, enc: &mut Encoder) {
        enc.raw(&self.0);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.raw().map(PublicKey)
    }
}

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Signature(pub Vec<u8>);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let hex = hex::encode(&self.0);
        write!(f, "Signature({})", &hex[..hex.len().min(16)])
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map(Signature).map_err(serde::de::Error::custom)
    }
}

impl Canonical for Signature {
    fn encode(&self, enc: &mut Encoder) {
        enc.bytes(&self.0);
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        dec.bytes().map(|b| Signature(b.to_vec()))
    }
}

/// Signing and verification for named actors.
pub trait SignatureScheme: Send + Sync + fmt::Debug {
    /// Tag written into snapshots so a reader knows which scheme produced them.
    fn scheme_id(&self) -> u8;
    fn public_key(&self, actor: &str) -> PublicKey;
    fn sign(&self, actor: &str, message: &[u8]) -> Signature;
    fn verify(&self, actor: &str, key: &PublicKey, message: &[u8], signature: &Signature) -> bool;
}

pub const KEYED_HASH_SCHEME_ID: u8 = 1;

/// HMAC-SHA256 stand-in for a real signature scheme.
#[derive(Clone)]
pub struct KeyedHashScheme {
    master: [u8; 32],
}

impl fmt::Debug for KeyedHashScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyedHashScheme").finish_non_exhaustive()
    }
}

impl KeyedHashScheme {
    pub fn new(master_seed: &[u8]) -> Self {
        Self {
            master: sha256_tagged(b"ledgerguard/master", &[master_seed]).0,
        }
    }

    /// The scheme used by simulations, tests and the CLI.
    pub fn simulation() -> Self {
        Self::new(b"ledgerguard-simulation")
    }

    fn secret(&self, actor: &str) -> [u8; 32] {
        let mut mac = <HmacSha256 as KeyInit>::new_from_slice(&self.master)
            .expect("hmac accepts any key length");
        mac.update(b"secret:");
        mac.update(actor.as_bytes());
        mac.finalize().into_bytes().into()
    }

    fn tag(secret: &[u8; 32], message: &[u8]) -> HmacSha256 {
        let mut mac =
            <HmacSha256 as KeyInit>::new_from_slice(secret).expect("hmac accepts any key length");
        mac.update(message);
        mac
    }
}

impl SignatureScheme for KeyedHashScheme {
    fn scheme_id(&self) -> u8 {
        KEYED_HASH_SCHEME_ID
    }

    fn public_key(&self, actor: &str) -> PublicKey {
        PublicKey(sha256_tagged(b"ledgerguard/pk", &[&self.secret(actor)]).0)
    }

    fn sign(&self, actor: &str, message: &[u8]) -> Signature {
        let secret = self.secret(actor);
        Signature(Self::tag(&secret, message).finalize().into_bytes().to_vec())
    }

    fn verify(&self, actor: &str, key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
        let secret = self.secret(actor);
        if PublicKey(sha256_tagged(b"ledgerguard/pk", &[&secret]).0) != *key {
            return false;
        }
        Self::tag(&secret, message).verify_slice(&signature.0).is_ok()
    }
}

/// Actor id to registered public key.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyRegistry {
    keys: BTreeMap<String, PublicKey>,
}

impl KeyRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `actor`. Re-registering the same key is a no-op; returns
    /// false if the actor already holds a different key.
    pub fn register(&mut self, actor: impl Into<String>, key: PublicKey) -> bool {
        match self.keys.entry(actor.into()) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(key);
                true
            }
            std::collections::btree_map::Entry::Occupied(o) => *o.get() == key,
        }
    }

    pub fn get(&self, actor: &str) -> Option<&PublicKey> {
        self.keys.get(actor)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &PublicKey)> {
        self.keys.iter()
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}
