// Standalone fallback page: same pipeline, no extension APIs. The user
// pastes a node URL, a KDS URL and the expected measurement; the page
// fetches, verifies and renders the verdict. The connection key comes
// from the response header here, since a plain page cannot introspect TLS.

import { webCryptoProvider } from "../src/crypto.js";
import { HttpKdsClient } from "../src/kds-client.js";
import { AttestationCompanion, type WellKnownResponse } from "../src/session.js";

const WELL_KNOWN_PATH = "/.well-known/revelio-attestation";
const CONN_KEY_HEADER = "x-revelio-conn-key";

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing element #${id}`);
  return found as T;
}

function makeFetcher(nodeUrl: string) {
  return async (_domain: string): Promise<WellKnownResponse | "network-error"> => {
    try {
      const resp = await fetch(nodeUrl.replace(/\/+$/, "") + WELL_KNOWN_PATH);
      const connKey = resp.headers.get(CONN_KEY_HEADER);
      if (!resp.ok) return { ok: false, connectionPublicKeyHex: connKey };
      return { ok: true, body: await resp.json(), connectionPublicKeyHex: connKey };
    } catch {
      return "network-error";
    }
  };
}

function render(badgeText: string, detail: string) {
  el("badge").textContent = badgeText;
  el("detail").textContent = detail;
  document.body.dataset.badge = badgeText;
}

el<HTMLButtonElement>("attest").addEventListener("click", async () => {
  const domain = el<HTMLInputElement>("domain").value.trim();
  const nodeUrl = el<HTMLInputElement>("node-url").value.trim();
  const kdsUrl = el<HTMLInputElement>("kds-url").value.trim();
  const measurement = el<HTMLInputElement>("measurement").value.trim();

  const companion = new AttestationCompanion({
    fetchWellKnown: makeFetcher(nodeUrl),
    chains: new HttpKdsClient(kdsUrl),
    crypto: webCryptoProvider(crypto.subtle),
    ui: {
      onBadge: (_d, badge) => render(badge, ""),
      onPrompt: async (_d, verdict) => {
        const proceed = window.confirm(
          `Attestation failed: ${verdict.status} (${verdict.details}). Proceed anyway?`,
        );
        return proceed ? "proceed" : "abort";
      },
      onBanner: (_d, message) => render("violation", message),
      onDiscovered: () =>
        render("discovered", "endpoint answers but no expected measurement is registered"),
    },
  });

  if (measurement) {
    companion.registerManually(domain, [measurement]);
  }
  const verdict = await companion.interceptFirstAccess(domain);
  if (verdict) {
    render(companion.badge(domain), `${verdict.status} ${verdict.details}`.trim());
  }
});
