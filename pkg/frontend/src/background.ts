// Extension background script. Only Firefox currently exposes the
// securityInfo API needed to read the connection key of a live request,
// so this file targets the `browser.*` namespace.

declare var browser: any;

import { webCryptoProvider } from "./crypto.js";
import { HttpKdsClient } from "./kds-client.js";
import { AttestationCompanion, type WellKnownResponse } from "./session.js";

const WELL_KNOWN_PATH = "/.well-known/revelio-attestation";
const CONN_KEY_HEADER = "x-revelio-conn-key";

const KDS_URL = "http://127.0.0.1:8000"; // configured via the options page in practice

function headerValue(headers: { name: string; value?: string }[], name: string): string | null {
  const found = headers.find((h) => h.name.toLowerCase() === name);
  return found?.value ?? null;
}

async function fetchWellKnown(domain: string): Promise<WellKnownResponse | "network-error"> {
  try {
    const resp = await fetch(`https://${domain}${WELL_KNOWN_PATH}`);
    const connKey = resp.headers.get(CONN_KEY_HEADER);
    if (!resp.ok) return { ok: false, connectionPublicKeyHex: connKey };
    return {
      ok: true,
      body: await resp.json(),
      connectionPublicKeyHex: connKey,
    };
  } catch {
    return "network-error";
  }
}

const companion = new AttestationCompanion({
  fetchWellKnown,
  chains: new HttpKdsClient(KDS_URL),
  crypto: webCryptoProvider(crypto.subtle),
  ui: {
    onBadge(domain, badge) {
      browser.browserAction.setBadgeText({ text: badge === "trusted" ? "OK" : "!" });
      browser.browserAction.setTitle({ title: `${domain}: ${badge}` });
    },
    async onPrompt(domain, verdict) {
      const proceed = await browser.runtime.sendMessage({
        kind: "violation-prompt",
        domain,
        verdict,
      });
      return proceed === true ? "proceed" : "abort";
    },
    onBanner(domain, message) {
      browser.notifications.create({
        type: "basic",
        title: `revelio: ${domain}`,
        message,
      });
    },
    onDiscovered(domain) {
      browser.notifications.create({
        type: "basic",
        title: "revelio endpoint discovered",
        message: `${domain} offers attestation; validate its measurement before trusting it.`,
      });
    },
  },
});

const attested = new Set<string>();

browser.webRequest.onBeforeRequest.addListener(
  async (details: { url: string }) => {
    const domain = new URL(details.url).hostname;
    if (attested.has(domain)) return {};
    attested.add(domain);
    const verdict = await companion.interceptFirstAccess(domain);
    if (verdict && verdict.status !== "Trusted" && !companion.allowRequest(domain)) {
      return { cancel: true };
    }
    return {};
  },
  { urls: ["<all_urls>"] },
  ["blocking"],
);

browser.webRequest.onHeadersReceived.addListener(
  async (details: { url: string; requestId: string; responseHeaders: any[] }) => {
    const domain = new URL(details.url).hostname;
    // securityInfo carries the certificate the connection actually used.
    const info = await browser.webRequest.getSecurityInfo(details.requestId, {
      certificateChain: false,
      rawDER: true,
    });
    const connKey =
      info?.certificates?.[0]?.subjectPublicKeyInfoDigest?.sha256 ??
      headerValue(details.responseHeaders ?? [], CONN_KEY_HEADER);
    companion.monitorRequest(domain, connKey);
    return {};
  },
  { urls: ["<all_urls>"] },
  ["blocking", "responseHeaders"],
);

export { companion };
