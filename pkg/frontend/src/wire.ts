// Wire formats shared with the fleet: hex JSON reports, length-prefixed
// certificates and chains. Layouts must match the node side byte for byte,
// since signatures are computed over these exact encodings.

export interface ReportJson {
  chip_id: string;
  tcb_version: number;
  measurement: string;
  report_data: string;
  signature: string;
}

export interface FetchedBundle {
  report: ReportJson;
  tls_public_key: string;
}

export function hexToBytes(hex: string): Uint8Array {
  if (hex.length % 2 !== 0 || /[^0-9a-fA-F]/.test(hex)) {
    throw new Error(`bad hex string (${hex.length} chars)`);
  }
  const out = new Uint8Array(hex.length / 2);
  for (let i = 0; i < out.length; i++) {
    out[i] = parseInt(hex.slice(i * 2, i * 2 + 2), 16);
  }
  return out;
}

export function bytesToHex(bytes: Uint8Array): string {
  return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}

export function bytesEqual(a: Uint8Array, b: Uint8Array): boolean {
  if (a.length !== b.length) return false;
  for (let i = 0; i < a.length; i++) if (a[i] !== b[i]) return false;
  return true;
}

export function concatBytes(...parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((n, p) => n + p.length, 0);
  const out = new Uint8Array(total);
  let offset = 0;
  for (const part of parts) {
    out.set(part, offset);
    offset += part.length;
  }
  return out;
}

class Reader {
  private pos = 0;
  constructor(private data: Uint8Array) {}

  take(n: number): Uint8Array {
    if (n < 0 || this.pos + n > this.data.length) {
      throw new Error(`truncated input: wanted ${n} bytes at offset ${this.pos}`);
    }
    const out = this.data.subarray(this.pos, this.pos + n);
    this.pos += n;
    return out;
  }

  takeU32(): number {
    const view = this.take(4);
    return new DataView(view.buffer, view.byteOffset, 4).getUint32(0);
  }

  takeU64(): bigint {
    const view = this.take(8);
    return new DataView(view.buffer, view.byteOffset, 8).getBigUint64(0);
  }

  takePrefixed(): Uint8Array {
    return this.take(this.takeU32());
  }

  takePrefixedString(): string {
    return new TextDecoder("utf-8", { fatal: true }).decode(this.takePrefixed());
  }

  remainder(): Uint8Array {
    const out = this.data.subarray(this.pos);
    this.pos = this.data.length;
    return out;
  }

  get offset(): number {
    return this.pos;
  }

  get exhausted(): boolean {
    return this.pos === this.data.length;
  }
}

const CERT_VERSION = 1;

export interface Certificate {
  subject: string;
  subjectPublicKey: Uint8Array;
  issuer: string;
  extensions: Map<string, string>;
  notBefore: bigint;
  notAfter: bigint;
  signature: Uint8Array;
  /** Exactly the bytes the issuer signed: everything before the signature. */
  signedPayload: Uint8Array;
}

export function parseCertificate(data: Uint8Array): Certificate {
  const reader = new Reader(data);
  const version = reader.take(1)[0];
  if (version !== CERT_VERSION) {
    throw new Error(`unsupported certificate version ${version}`);
  }
  const subject = reader.takePrefixedString();
  const subjectPublicKey = reader.takePrefixed();
  const issuer = reader.takePrefixedString();
  const extBlock = reader.takePrefixed();
  const notBefore = reader.takeU64();
  const notAfter = reader.takeU64();
  const signedEnd = reader.offset;
  const signature = reader.remainder();

  const extensions = new Map<string, string>();
  const extReader = new Reader(extBlock);
  while (!extReader.exhausted) {
    const key = extReader.takePrefixedString();
    extensions.set(key, extReader.takePrefixedString());
  }
  return {
    subject,
    subjectPublicKey,
    issuer,
    extensions,
    notBefore,
    notAfter,
    signature,
    signedPayload: data.subarray(0, signedEnd),
  };
}

export interface CertChain {
  ark: Certificate;
  ask: Certificate;
  vcek: Certificate;
}

export function parseChain(data: Uint8Array): CertChain {
  const reader = new Reader(data);
  const ark = parseCertificate(reader.takePrefixed());
  const ask = parseCertificate(reader.takePrefixed());
  const vcek = parseCertificate(reader.takePrefixed());
  if (!reader.exhausted) {
    throw new Error("trailing bytes after chain");
  }
  return { ark, ask, vcek };
}

const CHIP_ID_LEN = 64;
const MEASUREMENT_LEN = 48;
const REPORT_DATA_LEN = 64;

/** The canonical bytes the security processor signed. */
export function reportSigningPayload(report: ReportJson): Uint8Array {
  const chipId = hexToBytes(report.chip_id);
  const measurement = hexToBytes(report.measurement);
  const reportData = hexToBytes(report.report_data);
  if (
    chipId.length !== CHIP_ID_LEN ||
    measurement.length !== MEASUREMENT_LEN ||
    reportData.length !== REPORT_DATA_LEN
  ) {
    throw new Error("report field width mismatch");
  }
  const tcb = new Uint8Array(8);
  new DataView(tcb.buffer).setBigUint64(0, BigInt(report.tcb_version));
  return concatBytes(chipId, tcb, measurement, reportData);
}

/** 32-byte digest left-aligned in the 64-byte report-data field. */
export function padReportData(digest: Uint8Array): Uint8Array {
  const out = new Uint8Array(REPORT_DATA_LEN);
  out.set(digest, 0);
  return out;
}
