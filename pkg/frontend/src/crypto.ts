// Crypto behind a provider interface so the same pipeline runs under
// node:crypto in tests and under WebCrypto in the browser builds.

export interface CryptoProvider {
  sha256(data: Uint8Array): Promise<Uint8Array>;
  /** Raw 32-byte Ed25519 public key; false on any malformed input. */
  ed25519Verify(
    publicKey: Uint8Array,
    message: Uint8Array,
    signature: Uint8Array,
  ): Promise<boolean>;
}

/** WebCrypto-backed provider for the extension / standalone page. */
export function webCryptoProvider(subtle: SubtleCrypto): CryptoProvider {
  return {
    async sha256(data: Uint8Array): Promise<Uint8Array> {
      return new Uint8Array(await subtle.digest("SHA-256", data as BufferSource));
    },
    async ed25519Verify(publicKey, message, signature): Promise<boolean> {
      if (publicKey.length !== 32 || signature.length !== 64) return false;
      try {
        const key = await subtle.importKey("raw", publicKey as BufferSource, "Ed25519", false, [
          "verify",
        ]);
        return await subtle.verify("Ed25519", key, signature as BufferSource, message as BufferSource);
      } catch {
        return false;
      }
    },
  };
}
