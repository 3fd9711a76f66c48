// The attestation pipeline, re-implemented against the wire formats.
// Stage order matches the reference verifier exactly: chain, report
// signature, measurement, key binding; Trusted only when all four pass.

import type { CryptoProvider } from "./crypto.js";
import type { TrustedRegistry } from "./registry.js";
import {
  bytesEqual,
  bytesToHex,
  hexToBytes,
  padReportData,
  parseChain,
  reportSigningPayload,
  type CertChain,
  type Certificate,
  type FetchedBundle,
} from "./wire.js";

export type VerdictStatus =
  | "Trusted"
  | "ChainError"
  | "SignatureError"
  | "MeasurementMismatch"
  | "RevokedMeasurement"
  | "BindingMismatch"
  | "ConnectionReset";

export interface Verdict {
  status: VerdictStatus;
  details: string;
}

export class UsageError extends Error {}

/** Raw chain bytes for a chip, or null when the KDS has none. */
export interface ChainSource {
  fetchVcek(chipIdHex: string, tcbVersion: number): Promise<Uint8Array | null>;
}

/** Chains are stable per (chip, TCB) until a firmware update, so cache them. */
export class VcekCache implements ChainSource {
  private cache = new Map<string, Uint8Array | null>();
  fetches = 0;

  constructor(private inner: ChainSource) {}

  async fetchVcek(chipIdHex: string, tcbVersion: number): Promise<Uint8Array | null> {
    const key = `${chipIdHex.toLowerCase()}:${tcbVersion}`;
    if (!this.cache.has(key)) {
      this.fetches++;
      this.cache.set(key, await this.inner.fetchVcek(chipIdHex, tcbVersion));
    }
    return this.cache.get(key)!;
  }
}

async function verifyCertificate(
  crypto: CryptoProvider,
  cert: Certificate,
  issuerPublicKey: Uint8Array,
): Promise<boolean> {
  // Hybrid fleet keys are sign_pub(32) || enc_pub(32); signatures verify
  // under the first half.
  if (issuerPublicKey.length !== 64) return false;
  return crypto.ed25519Verify(issuerPublicKey.subarray(0, 32), cert.signedPayload, cert.signature);
}

async function validateChain(
  crypto: CryptoProvider,
  chain: CertChain,
  chipIdHex: string,
  tcbVersion: number,
): Promise<boolean> {
  const { ark, ask, vcek } = chain;
  if (ark.issuer !== ark.subject) return false;
  if (!(await verifyCertificate(crypto, ark, ark.subjectPublicKey))) return false;
  if (ask.issuer !== ark.subject) return false;
  if (!(await verifyCertificate(crypto, ask, ark.subjectPublicKey))) return false;
  if (vcek.issuer !== ask.subject) return false;
  if (!(await verifyCertificate(crypto, vcek, ask.subjectPublicKey))) return false;
  if (vcek.extensions.get("chip_id") !== chipIdHex.toLowerCase()) return false;
  if (vcek.extensions.get("tcb_version") !== String(tcbVersion)) return false;
  return true;
}

export interface AttestInput {
  registry: TrustedRegistry;
  domain: string;
  fetched: FetchedBundle;
  connectionPublicKeyHex: string | null;
  chains: ChainSource;
  crypto: CryptoProvider;
}

export async function attestDomain(input: AttestInput): Promise<Verdict> {
  const { registry, domain, fetched, connectionPublicKeyHex, chains, crypto } = input;
  const entry = registry.entries.get(domain);
  if (!entry) {
    throw new UsageError(`domain '${domain}' is not registered`);
  }

  let report;
  let tlsPublicKey: Uint8Array;
  let signingPayload: Uint8Array;
  try {
    report = fetched.report;
    tlsPublicKey = hexToBytes(fetched.tls_public_key);
    signingPayload = reportSigningPayload(report);
  } catch (e) {
    throw new UsageError(`malformed attestation bundle: ${e}`);
  }

  // Stage 1: certificate chain.
  const chainBytes = await chains.fetchVcek(report.chip_id, report.tcb_version);
  if (chainBytes === null) {
    return { status: "ChainError", details: "no chain for chip" };
  }
  let chain: CertChain;
  try {
    chain = parseChain(chainBytes);
  } catch {
    return { status: "ChainError", details: "chain does not parse" };
  }
  if (!(await validateChain(crypto, chain, report.chip_id, report.tcb_version))) {
    return { status: "ChainError", details: "chain does not validate" };
  }

  // Stage 2: report signature under the chip key.
  const vcekKey = chain.vcek.subjectPublicKey;
  const signatureOk =
    vcekKey.length === 64 &&
    (await crypto.ed25519Verify(
      vcekKey.subarray(0, 32),
      signingPayload,
      hexToBytes(report.signature),
    ));
  if (!signatureOk) {
    return { status: "SignatureError", details: "report signature invalid" };
  }

  // Stage 3: measurement against the registry.
  const measurement = report.measurement.toLowerCase();
  if (entry.revoked.has(measurement)) {
    return { status: "RevokedMeasurement", details: "measurement revoked" };
  }
  if (!entry.accepted.has(measurement)) {
    return { status: "MeasurementMismatch", details: "measurement not accepted" };
  }

  // Stage 4: the report binds the served key, and the connection uses it.
  const bound = padReportData(await crypto.sha256(tlsPublicKey));
  if (!bytesEqual(bound, hexToBytes(report.report_data))) {
    return { status: "BindingMismatch", details: "report does not bind served key" };
  }
  if (
    connectionPublicKeyHex === null ||
    connectionPublicKeyHex.toLowerCase() !== bytesToHex(tlsPublicKey)
  ) {
    return { status: "BindingMismatch", details: "connection key differs" };
  }

  return { status: "Trusted", details: "" };
}

export interface Session {
  domain: string;
  attestedKeyHex: string | null;
}

export function monitorRequest(session: Session, connectionPublicKeyHex: string | null): Verdict {
  if (!session.attestedKeyHex) {
    throw new UsageError("session was never attested");
  }
  if (connectionPublicKeyHex?.toLowerCase() === session.attestedKeyHex) {
    return { status: "Trusted", details: "" };
  }
  return { status: "ConnectionReset", details: "connection key changed" };
}
