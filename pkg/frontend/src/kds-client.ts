// fetch-based chain source for the KDS HTTP facade.

import type { ChainSource } from "./verifier.js";

export type FetchLike = (url: string) => Promise<{
  ok: boolean;
  status: number;
  arrayBuffer(): Promise<ArrayBuffer>;
}>;

export class HttpKdsClient implements ChainSource {
  constructor(
    private baseUrl: string,
    private fetchImpl: FetchLike = fetch,
  ) {
    this.baseUrl = baseUrl.replace(/\/+$/, "");
  }

  async fetchVcek(chipIdHex: string, tcbVersion: number): Promise<Uint8Array | null> {
    const url = `${this.baseUrl}/vcek?chip_id=${chipIdHex}&tcb=${tcbVersion}`;
    const resp = await this.fetchImpl(url);
    if (resp.status === 404) return null;
    if (!resp.ok) throw new Error(`KDS unreachable: http ${resp.status}`);
    return new Uint8Array(await resp.arrayBuffer());
  }
}
