// node:crypto provider, used by the test suite (and any CLI embedding).

import { createHash, createPublicKey, verify as nodeVerify } from "node:crypto";

import type { CryptoProvider } from "./crypto.js";

// DER SPKI header for a raw 32-byte Ed25519 public key.
const ED25519_SPKI_PREFIX = Buffer.from("302a300506032b6570032100", "hex");

export const nodeCryptoProvider: CryptoProvider = {
  async sha256(data: Uint8Array): Promise<Uint8Array> {
    return new Uint8Array(createHash("sha256").update(data).digest());
  },

  async ed25519Verify(
    publicKey: Uint8Array,
    message: Uint8Array,
    signature: Uint8Array,
  ): Promise<boolean> {
    if (publicKey.length !== 32 || signature.length !== 64) return false;
    try {
      const key = createPublicKey({
        key: Buffer.concat([ED25519_SPKI_PREFIX, Buffer.from(publicKey)]),
        format: "der",
        type: "spki",
      });
      return nodeVerify(null, Buffer.from(message), key, Buffer.from(signature));
    } catch {
      return false;
    }
  },
};
