// Trusted-registry file formats, kept import/export compatible with the
// fleet tooling: line-oriented text and the JSON alternative.

export interface RegistryEntry {
  accepted: Set<string>;
  revoked: Set<string>;
  pinnedKey: string | null;
}

export interface RegistryJson {
  domains: Record<
    string,
    { accepted: string[]; revoked: string[]; pinned_tls_public_key: string | null }
  >;
}

export class TrustedRegistry {
  entries = new Map<string, RegistryEntry>();

  entry(domain: string): RegistryEntry {
    let entry = this.entries.get(domain);
    if (!entry) {
      entry = { accepted: new Set(), revoked: new Set(), pinnedKey: null };
      this.entries.set(domain, entry);
    }
    return entry;
  }

  addAccepted(domain: string, measurementHex: string): void {
    const entry = this.entry(domain);
    const hex = measurementHex.toLowerCase();
    if (entry.revoked.has(hex)) {
      throw new Error("measurement is revoked; accepted and revoked must stay disjoint");
    }
    entry.accepted.add(hex);
  }

  addRevoked(domain: string, measurementHex: string): void {
    const entry = this.entry(domain);
    const hex = measurementHex.toLowerCase();
    entry.accepted.delete(hex);
    entry.revoked.add(hex);
  }

  setPinnedKey(domain: string, keyHex: string | null): void {
    this.entry(domain).pinnedKey = keyHex ? keyHex.toLowerCase() : null;
  }

  static fromText(text: string): TrustedRegistry {
    const registry = new TrustedRegistry();
    const lines = text.split("\n");
    for (let i = 0; i < lines.length; i++) {
      const line = lines[i].trim();
      if (!line || line.startsWith("#")) continue;
      const parts = line.split(/\s+/);
      if (parts.length !== 3) {
        throw new Error(`registry line ${i + 1}: expected 3 fields`);
      }
      const [domain, hex, flag] = parts;
      if (flag === "accepted") registry.addAccepted(domain, hex);
      else if (flag === "revoked") registry.addRevoked(domain, hex);
      else if (flag === "pinned") registry.setPinnedKey(domain, hex);
      else throw new Error(`registry line ${i + 1}: unknown flag '${flag}'`);
    }
    return registry;
  }

  toText(): string {
    const lines = ["# revelio trusted registry", "# <domain> <hex> accepted|revoked|pinned"];
    for (const domain of [...this.entries.keys()].sort()) {
      const entry = this.entries.get(domain)!;
      for (const m of [...entry.accepted].sort()) lines.push(`${domain} ${m} accepted`);
      for (const m of [...entry.revoked].sort()) lines.push(`${domain} ${m} revoked`);
      if (entry.pinnedKey) lines.push(`${domain} ${entry.pinnedKey} pinned`);
    }
    return lines.join("\n") + "\n";
  }

  static fromJsonObj(obj: RegistryJson): TrustedRegistry {
    const registry = new TrustedRegistry();
    for (const [domain, doc] of Object.entries(obj.domains ?? {})) {
      for (const m of doc.accepted ?? []) registry.addAccepted(domain, m);
      for (const m of doc.revoked ?? []) registry.addRevoked(domain, m);
      if (doc.pinned_tls_public_key) registry.setPinnedKey(domain, doc.pinned_tls_public_key);
    }
    return registry;
  }

  toJsonObj(): RegistryJson {
    const domains: RegistryJson["domains"] = {};
    for (const domain of [...this.entries.keys()].sort()) {
      const entry = this.entries.get(domain)!;
      domains[domain] = {
        accepted: [...entry.accepted].sort(),
        revoked: [...entry.revoked].sort(),
        pinned_tls_public_key: entry.pinnedKey,
      };
    }
    return { domains };
  }
}
