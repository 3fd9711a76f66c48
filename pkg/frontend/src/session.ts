// Badge state machine: first-access interception, per-request monitoring,
// opportunistic discovery, and the proceed/abort gate. UI rendering is
// injected, so the same machine drives the extension popup, the banner
// and the standalone page.

import type { CryptoProvider } from "./crypto.js";
import { TrustedRegistry } from "./registry.js";
import {
  attestDomain,
  monitorRequest,
  UsageError,
  type ChainSource,
  type Session,
  type Verdict,
  VcekCache,
} from "./verifier.js";
import type { FetchedBundle } from "./wire.js";

export type Badge =
  | "none"
  | "pending"
  | "trusted"
  | "violation"
  | "inconclusive"
  | "discovered";

export interface RegistrationEntry {
  domain: string;
  expectedMeasurements: string[];
  source: "manual" | "discovered-unconfirmed";
  pinnedKey?: string;
}

export interface WellKnownResponse {
  ok: boolean;
  body?: FetchedBundle;
  connectionPublicKeyHex: string | null;
}

export interface UiHooks {
  onBadge(domain: string, badge: Badge): void;
  /** Violation modal; resolves with the user's decision. */
  onPrompt(domain: string, verdict: Verdict): Promise<"proceed" | "abort">;
  onBanner(domain: string, message: string): void;
  /** Discovery alert: a site answered the well-known URL but is unregistered. */
  onDiscovered(domain: string): void;
}

export interface CompanionDeps {
  fetchWellKnown(domain: string): Promise<WellKnownResponse | "network-error">;
  chains: ChainSource;
  crypto: CryptoProvider;
  ui: UiHooks;
}

interface DomainState {
  badge: Badge;
  session: Session | null;
  userProceeded: boolean;
  inFlight: Promise<Verdict | null> | null;
}

export class AttestationCompanion {
  readonly registrations = new Map<string, RegistrationEntry>();
  readonly chains: VcekCache;
  private states = new Map<string, DomainState>();

  constructor(private deps: CompanionDeps) {
    this.chains = new VcekCache(deps.chains);
  }

  registerManually(domain: string, expectedMeasurements: string[], pinnedKey?: string): void {
    this.registrations.set(domain, {
      domain,
      expectedMeasurements: expectedMeasurements.map((m) => m.toLowerCase()),
      source: "manual",
      pinnedKey,
    });
    this.states.delete(domain); // force re-attestation with the new anchors
  }

  /** User confirmed a discovered entry after validating the measurement. */
  confirmDiscovered(domain: string, expectedMeasurements: string[]): void {
    this.registerManually(domain, expectedMeasurements);
  }

  importRegistry(registry: TrustedRegistry): void {
    for (const [domain, entry] of registry.entries) {
      this.registerManually(domain, [...entry.accepted], entry.pinnedKey ?? undefined);
    }
  }

  private state(domain: string): DomainState {
    let s = this.states.get(domain);
    if (!s) {
      s = { badge: "none", session: null, userProceeded: false, inFlight: null };
      this.states.set(domain, s);
    }
    return s;
  }

  badge(domain: string): Badge {
    return this.state(domain).badge;
  }

  /** Gate for user data: nothing leaves before Trusted or explicit proceed. */
  allowRequest(domain: string): boolean {
    const s = this.state(domain);
    return s.badge === "trusted" || s.userProceeded;
  }

  private setBadge(domain: string, badge: Badge): void {
    this.state(domain).badge = badge;
    this.deps.ui.onBadge(domain, badge);
  }

  private toRegistry(entry: RegistrationEntry): TrustedRegistry {
    const registry = new TrustedRegistry();
    for (const m of entry.expectedMeasurements) registry.addAccepted(entry.domain, m);
    if (entry.pinnedKey) registry.setPinnedKey(entry.domain, entry.pinnedKey);
    return registry;
  }

  /**
   * First access to a domain in this browser context: intercept, fetch the
   * well-known report, run the pipeline, render the result. Only one
   * attestation is ever in flight per domain; concurrent calls share it.
   */
  async interceptFirstAccess(domain: string): Promise<Verdict | null> {
    const s = this.state(domain);
    if (s.inFlight) return s.inFlight;
    const run = this.attestOnce(domain).finally(() => {
      this.state(domain).inFlight = null;
    });
    s.inFlight = run;
    return run;
  }

  private async attestOnce(domain: string): Promise<Verdict | null> {
    const entry = this.registrations.get(domain);
    this.setBadge(domain, "pending");

    const resp = await this.deps.fetchWellKnown(domain);
    if (resp === "network-error") {
      this.setBadge(domain, "inconclusive");
      return null;
    }
    if (!resp.ok || !resp.body) {
      this.setBadge(domain, entry ? "violation" : "none");
      return null;
    }

    if (!entry || entry.source === "discovered-unconfirmed") {
      // The site speaks the protocol but nobody vouched for a measurement:
      // alert, remember, never trust automatically.
      if (!entry) {
        this.registrations.set(domain, {
          domain,
          expectedMeasurements: [],
          source: "discovered-unconfirmed",
        });
      }
      this.setBadge(domain, "discovered");
      this.deps.ui.onDiscovered(domain);
      return null;
    }

    let verdict: Verdict;
    try {
      verdict = await attestDomain({
        registry: this.toRegistry(entry),
        domain,
        fetched: resp.body,
        connectionPublicKeyHex: resp.connectionPublicKeyHex,
        chains: this.chains,
        crypto: this.deps.crypto,
      });
    } catch (e) {
      if (e instanceof UsageError) throw e;
      // KDS outage or similar transport failure: retryable, never trusted.
      this.setBadge(domain, "inconclusive");
      return null;
    }

    const s = this.state(domain);
    if (verdict.status === "Trusted") {
      s.session = { domain, attestedKeyHex: resp.body.tls_public_key.toLowerCase() };
      this.setBadge(domain, "trusted");
    } else {
      s.session = null;
      this.setBadge(domain, "violation");
      const decision = await this.deps.ui.onPrompt(domain, verdict);
      s.userProceeded = decision === "proceed";
    }
    return verdict;
  }

  /**
   * Every subsequent request: compare the connection key against the
   * attested one; a swap raises the banner on that same request.
   */
  monitorRequest(domain: string, connectionPublicKeyHex: string | null): Verdict | null {
    const s = this.state(domain);
    if (!s.session) return null; // nothing attested, nothing to hold
    const verdict = monitorRequest(s.session, connectionPublicKeyHex);
    if (verdict.status !== "Trusted") {
      s.session = null;
      this.setBadge(domain, "violation");
      this.deps.ui.onBanner(domain, "TLS connection reset: key no longer matches attestation");
    }
    return verdict;
  }
}
