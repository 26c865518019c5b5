/**
 * View state and presenter logic for the marketplace client.
 *
 * The store is a thin projection of peer-core state: every mutation is a
 * control-API round trip and the store re-renders from the authoritative
 * response (e.g. quote boards are always refreshed via `list_quotes`, so
 * the displayed ranking is the peer core's ranking). Server-pushed events
 * only trigger refreshes or append to local projections; no ordering or
 * filtering decisions are made in the browser.
 */

import { ControlClient, ControlError, EventFrame } from "./control.js";

export interface Session {
  pid: string;
  tid: string;
  nickname: string;
}

export interface WantedView {
  wanted_id: string;
  requester: string;
  category: string;
  description: string;
  lat: number;
  lon: number;
  remote_capable: boolean;
  budget_cents: number;
  currency: string;
  status: string;
  created_at: string;
}

export interface QuoteView {
  quote_id: string;
  wanted_id: string;
  provider: string;
  price_cents: number;
  currency: string;
  note: string;
  received_at: string;
  provider_rating: number;
}

export interface ChatMessageView {
  msg_id: string;
  author: string;
  body: string;
  lamport: number;
}

export interface ViewState {
  connection: "connecting" | "connected" | "offline";
  session: Session | null;
  inbox: WantedView[];
  myWanteds: WantedView[];
  quoteBoards: Map<string, QuoteView[]>;
  activeChats: Map<string, ChatMessageView[]>;
  acceptedPeers: Set<string>;
  lastError: string | null;
}

export interface PostWantedForm {
  category: string;
  description: string;
  lat: number;
  lon: number;
  remote_capable: boolean;
  budget_cents: number;
  currency?: string;
}

export class MarketplaceStore {
  readonly state: ViewState = {
    connection: "offline",
    session: null,
    inbox: [],
    myWanteds: [],
    quoteBoards: new Map(),
    activeChats: new Map(),
    acceptedPeers: new Set(),
    lastError: null,
  };

  private listeners = new Set<() => void>();

  constructor(private client: ControlClient) {
    client.onStateChange((s) => {
      this.state.connection = s;
      if (s === "connected") void this.resync();
      this.notify();
    });
    client.onEvent((ev) => void this.handleEvent(ev));
  }

  subscribe(fn: () => void): () => void {
    this.listeners.add(fn);
    return () => this.listeners.delete(fn);
  }

  private notify(): void {
    for (const fn of this.listeners) fn();
  }

  private async call(
    cmd: string,
    params: Record<string, unknown> = {},
  ): Promise<Record<string, unknown>> {
    try {
      const data = await this.client.request(cmd, params);
      this.state.lastError = null;
      return data;
    } catch (err) {
      this.state.lastError =
        err instanceof ControlError ? `${err.code}: ${err.detail}` : String(err);
      this.notify();
      throw err;
    }
  }

  // -- session ------------------------------------------------------------

  async register(email: string, nickname: string): Promise<void> {
    const data = await this.call("register", { email, nickname });
    this.state.session = data as unknown as Session;
    await this.call("watch");
    await this.resync();
  }

  async login(credential: string): Promise<void> {
    const data = await this.call("login", { credential });
    this.state.session = data as unknown as Session;
    await this.call("watch");
    await this.resync();
  }

  /** Pull the authoritative projections after connect or login. */
  async resync(): Promise<void> {
    if (!this.state.session) {
      const status = await this.call("status").catch(() => null);
      if (status && status.pid) {
        this.state.session = {
          pid: String(status.pid),
          tid: String(status.tid ?? ""),
          nickname: String(status.nickname ?? ""),
        };
      } else {
        this.notify();
        return;
      }
    }
    await this.refreshInbox();
    await this.refreshMyWanteds();
    this.notify();
  }

  // -- requester flow -----------------------------------------------------

  async postWanted(form: PostWantedForm): Promise<string> {
    const data = await this.call("post_wanted", {
      category: form.category,
      description: form.description,
      lat: form.lat,
      lon: form.lon,
      remote_capable: form.remote_capable,
      budget_cents: form.budget_cents,
      currency: form.currency ?? "USD",
    });
    await this.refreshMyWanteds();
    this.notify();
    return String(data.wanted_id);
  }

  async refreshMyWanteds(): Promise<void> {
    if (!this.state.session) return;
    const data = await this.call("list_wanteds", {
      requester: this.state.session.pid,
    });
    this.state.myWanteds = (data.wanteds as WantedView[]) ?? [];
    for (const w of this.state.myWanteds) {
      await this.refreshQuotes(w.wanted_id);
    }
    this.notify();
  }

  async refreshQuotes(wantedId: string): Promise<void> {
    const data = await this.call("list_quotes", { wanted_id: wantedId });
    this.state.quoteBoards.set(wantedId, (data.quotes as QuoteView[]) ?? []);
    this.notify();
  }

  async acceptQuote(quoteId: string): Promise<string> {
    const data = await this.call("accept_quote", { quote_id: quoteId });
    const peer = String(data.peer);
    this.state.acceptedPeers.add(peer);
    await this.refreshMyWanteds();
    await this.refreshChat(peer);
    this.notify();
    return peer;
  }

  // -- provider flow ------------------------------------------------------

  async refreshInbox(): Promise<void> {
    const data = await this.call("inbox");
    this.state.inbox = (data.wanteds as WantedView[]) ?? [];
    this.notify();
  }

  async submitQuote(
    wantedId: string,
    priceCents: number,
    note: string,
  ): Promise<string> {
    const data = await this.call("submit_quote", {
      wanted_id: wantedId,
      price_cents: priceCents,
      note,
    });
    this.notify();
    return String(data.quote_id);
  }

  // -- chat and rating ----------------------------------------------------

  async refreshChat(peer: string): Promise<void> {
    const data = await this.call("chat_history", { peer });
    this.state.activeChats.set(peer, (data.msgs as ChatMessageView[]) ?? []);
    this.notify();
  }

  async sendChat(peer: string, body: string): Promise<void> {
    await this.call("send_chat", { peer, body });
    await this.refreshChat(peer);
  }

  async ratePeer(peer: string, score: number, comment: string): Promise<void> {
    await this.call("rate", { peer, score, comment });
    this.notify();
  }

  // -- event stream -------------------------------------------------------

  private async handleEvent(ev: EventFrame): Promise<void> {
    try {
      switch (ev.event) {
        case "request":
          await this.refreshInbox();
          break;
        case "quote": {
          const quote = ev.quote as { wanted_id?: string } | undefined;
          if (quote?.wanted_id) await this.refreshQuotes(quote.wanted_id);
          break;
        }
        case "accepted": {
          const winner = ev.winner;
          if (winner && this.state.session?.pid === winner) {
            this.state.acceptedPeers.add(String(ev.requester ?? ""));
          }
          await this.refreshInbox();
          break;
        }
        case "chat": {
          const peer = String(ev.peer ?? "");
          if (peer) await this.refreshChat(peer);
          break;
        }
      }
    } catch {
      // refresh failures surface through lastError; the event itself is
      // advisory and the next resync repairs the projection
    }
    this.notify();
  }
}
