/**
 * Browser entry point. The control-API URL comes from the `core` query
 * parameter, defaulting to a peer core on localhost.
 */

import { ControlClient, SocketFactory } from "./control.js";
import { MarketplaceStore } from "./state.js";
import { AppView } from "./ui.js";

export function boot(
  root: HTMLElement,
  coreUrl: string,
  makeSocket?: SocketFactory,
): {
  client: ControlClient;
  store: MarketplaceStore;
  view: AppView;
} {
  const client = makeSocket
    ? new ControlClient(coreUrl, makeSocket)
    : new ControlClient(coreUrl);
  const store = new MarketplaceStore(client);
  const view = new AppView(root, store);
  client.connect();
  return { client, store, view };
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  const params = new URLSearchParams(window.location.search);
  const coreUrl = params.get("core") ?? "ws://127.0.0.1:7331/app";
  boot(document.getElementById("app")!, coreUrl);
}
