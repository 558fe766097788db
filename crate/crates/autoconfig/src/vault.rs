//! Passphrase-encrypted file envelope.
//!
//! ```text
//! $SOCVAULT;1;argon2id;m=19456,t=2,p=1;xchacha20poly1305
//! <base64 of salt(16) || nonce(24) || ciphertext+tag>
//! ```
//!
//! The header line is bound to the ciphertext as associated data.

use argon2::{Algorithm, Argon2, Params, Version};
use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use rand::RngCore;

pub const MAGIC: &str = "$SOCVAULT";
const FORMAT_VERSION: &str = "1";
const KDF: &str = "argon2id";
const CIPHER: &str = "xchacha20poly1305";
const SALT_LEN: usize = 16;
const NONCE_LEN: usize = 24;
const KEY_LEN: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KdfParams {
    pub memory_kib: u32,
    pub iterations: u32,
    pub lanes: u32,
}

impl Default for KdfParams {
    fn default() -> Self {
        Self { memory_kib: 19_456, iterations: 2, lanes: 1 }
    }
}

impl KdfParams {
    /// Cheap settings for bulk property checks.
    pub const LIGHT: KdfParams = KdfParams { memory_kib: 64, iterations: 1, lanes: 1 };

    fn acceptable(&self) -> bool {
        (1..=16).contains(&self.lanes)
            && (1..=16).contains(&self.iterations)
            && self.memory_kib >= 8 * self.lanes
            && self.memory_kib <= 1 << 20
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VaultError {
    #[error("the passphrase is empty")]
    EmptyPassphrase,
    #[error("wrong passphrase or tampered vault")]
    WrongPassphraseOrTampered,
}

pub fn is_vault(text: &[u8]) -> bool {
    text.starts_with(MAGIC.as_bytes())
}

fn header(params: &KdfParams) -> String {
    format!(
        "{MAGIC};{FORMAT_VERSION};{KDF};m={},t={},p={};{CIPHER}",
        params.memory_kib, params.iterations, params.lanes
    )
}

fn parse_header(line: &str) -> Option<KdfParams> {
    let parts: Vec<&str> = line.split(';').collect();
    let [MAGIC, FORMAT_VERSION, KDF, costs, CIPHER] = parts.as_slice() else {
        return None;
    };
    let mut values = [0u32; 3];
    let fields: Vec<&str> = costs.split(',').collect();
    if fields.len() != 3 {
        return None;
    }
    for ((field, name), slot) in fields.iter().zip(["m", "t", "p"]).zip(values.iter_mut()) {
        let (key, value) = field.split_once('=')?;
        if key != name {
            return None;
        }
        *slot = value.parse().ok()?;
    }
    let params = KdfParams { memory_kib: values[0], iterations: values[1], lanes: values[2] };
    // Only the canonical rendering is accepted.
    (params.acceptable() && header(&params) == line).then_some(params)
}

fn derive(passphrase: &[u8], salt: &[u8], params: &KdfParams) -> Option<[u8; KEY_LEN]> {
    let p = Params::new(params.memory_kib, params.iterations, params.lanes, Some(KEY_LEN)).ok()?;
    let mut key = [0u8; KEY_LEN];
    Argon2::new(Algorithm::Argon2id, Version::V0x13, p).hash_password_into(passphrase, salt, &mut key).ok()?;
    Some(key)
}

pub fn vault_encrypt(plaintext: &[u8], passphrase: &str) -> Result<String, VaultError> {
    vault_encrypt_with(plaintext, passphrase, KdfParams::default())
}

pub fn vault_encrypt_with(plaintext: &[u8], passphrase: &str, params: KdfParams) -> Result<String, VaultError> {
    if passphrase.is_empty() {
        return Err(VaultError::EmptyPassphrase);
    }
    assert!(params.acceptable(), "unsupported key-derivation parameters {params:?}");
    let mut rng = rand::rng();
    let mut salt = [0u8; SALT_LEN];
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut salt);
    rng.fill_bytes(&mut nonce);
    let head = header(&params);
    let key = derive(passphrase.as_bytes(), &salt, &params).expect("parameters checked");
    let sealed = XChaCha20Poly1305::new(&key.into())
        .encrypt(XNonce::from_slice(&nonce), Payload { msg: plaintext, aad: head.as_bytes() })
        .expect("in-memory encryption");
    let mut body = Vec::with_capacity(SALT_LEN + NONCE_LEN + sealed.len());
    body.extend_from_slice(&salt);
    body.extend_from_slice(&nonce);
    body.extend_from_slice(&sealed);
    Ok(format!("{head}\n{}\n", STANDARD.encode(body)))
}

pub fn vault_decrypt(envelope: &str, passphrase: &str) -> Result<Vec<u8>, VaultError> {
    if passphrase.is_empty() {
        return Err(VaultError::EmptyPassphrase);
    }
    let tampered = VaultError::WrongPassphraseOrTampered;
    let rest = envelope.strip_suffix('\n').ok_or(tampered.clone())?;
    let (head, body) = rest.split_once('\n').ok_or(tampered.clone())?;
    let params = parse_header(head).ok_or(tampered.clone())?;
    let body = STANDARD.decode(body).map_err(|_| tampered.clone())?;
    if body.len() < SALT_LEN + NONCE_LEN + 16 {
        return Err(tampered);
    }
    let (salt, rest) = body.split_at(SALT_LEN);
    let (nonce, sealed) = rest.split_at(NONCE_LEN);
    let key = derive(passphrase.as_bytes(), salt, &params).ok_or(tampered.clone())?;
    XChaCha20Poly1305::new(&key.into())
        .decrypt(XNonce::from_slice(nonce), Payload { msg: sealed, aad: head.as_bytes() })
        .map_err(|_| tampered)
}
