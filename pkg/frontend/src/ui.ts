/**
 * DOM views. Each render is a full projection of the store's state; the
 * views hold no state of their own and every button click calls straight
 * into the store, which round-trips through the peer core's control API.
 */

import { MarketplaceStore, QuoteView, WantedView } from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

function money(cents: number, currency: string): string {
  return `${(cents / 100).toFixed(2)} ${currency}`;
}

export class AppView {
  private doc: Document;

  constructor(
    private root: HTMLElement,
    private store: MarketplaceStore,
  ) {
    this.doc = root.ownerDocument;
    store.subscribe(() => this.render());
    this.render();
  }

  render(): void {
    const s = this.store.state;
    this.root.textContent = "";

    if (s.connection !== "connected") {
      this.root.append(
        el(this.doc, "div", { class: "banner", "data-testid": "offline-banner" },
          s.connection === "connecting" ? "connecting to peer core" : "peer core offline"),
      );
    }
    if (s.lastError) {
      this.root.append(
        el(this.doc, "div", { class: "error", "data-testid": "last-error" }, s.lastError),
      );
    }

    if (!s.session) {
      this.root.append(this.authForms());
      return;
    }

    this.root.append(
      el(this.doc, "div", { "data-testid": "session" },
        `${s.session.nickname} (${s.session.pid})`),
      this.postWantedForm(),
      this.inboxView(),
      this.myWantedsView(),
      this.chatsView(),
    );
  }

  private authForms(): HTMLElement {
    const box = el(this.doc, "div", { "data-testid": "auth" });
    const email = el(this.doc, "input", { "data-testid": "reg-email", placeholder: "email" });
    const nickname = el(this.doc, "input", { "data-testid": "reg-nickname", placeholder: "nickname" });
    const registerBtn = el(this.doc, "button", { "data-testid": "reg-submit" }, "Register");
    registerBtn.addEventListener("click", () => {
      void this.store.register(email.value, nickname.value).catch(() => {});
    });
    const credential = el(this.doc, "input", { "data-testid": "login-credential", placeholder: "email or pid" });
    const loginBtn = el(this.doc, "button", { "data-testid": "login-submit" }, "Log in");
    loginBtn.addEventListener("click", () => {
      void this.store.login(credential.value).catch(() => {});
    });
    box.append(email, nickname, registerBtn, credential, loginBtn);
    return box;
  }

  private postWantedForm(): HTMLElement {
    const box = el(this.doc, "fieldset", { "data-testid": "post-wanted" });
    box.append(el(this.doc, "legend", {}, "Post a Wanted"));
    const category = el(this.doc, "input", { "data-testid": "pw-category", placeholder: "category" });
    const description = el(this.doc, "input", { "data-testid": "pw-description", placeholder: "description" });
    const lat = el(this.doc, "input", { "data-testid": "pw-lat", placeholder: "lat" });
    const lon = el(this.doc, "input", { "data-testid": "pw-lon", placeholder: "lon" });
    const remote = el(this.doc, "input", { "data-testid": "pw-remote", type: "checkbox" });
    const budget = el(this.doc, "input", { "data-testid": "pw-budget", placeholder: "budget (cents)" });
    const submit = el(this.doc, "button", { "data-testid": "pw-submit" }, "Post");
    submit.addEventListener("click", () => {
      void this.store
        .postWanted({
          category: category.value,
          description: description.value,
          lat: Number(lat.value),
          lon: Number(lon.value),
          remote_capable: remote.checked,
          budget_cents: Number(budget.value || "0"),
        })
        .catch(() => {});
    });
    box.append(category, description, lat, lon, remote, budget, submit);
    return box;
  }

  private inboxView(): HTMLElement {
    const box = el(this.doc, "section", { "data-testid": "inbox" });
    box.append(el(this.doc, "h2", {}, "Inbox"));
    const list = el(this.doc, "ul", { "data-testid": "inbox-list" });
    for (const w of this.store.state.inbox) {
      const item = el(this.doc, "li", {
        "data-testid": "inbox-item",
        "data-wanted-id": w.wanted_id,
      });
      item.append(
        el(this.doc, "span", {}, `${w.category}: ${w.description} ` +
          `(${money(w.budget_cents, w.currency)})`),
      );
      const price = el(this.doc, "input", { "data-testid": `quote-price-${w.wanted_id}`, placeholder: "price (cents)" });
      const note = el(this.doc, "input", { "data-testid": `quote-note-${w.wanted_id}`, placeholder: "note" });
      const send = el(this.doc, "button", { "data-testid": `quote-submit-${w.wanted_id}` }, "Quote");
      send.addEventListener("click", () => {
        void this.store
          .submitQuote(w.wanted_id, Number(price.value), note.value)
          .catch(() => {});
      });
      item.append(price, note, send);
      list.append(item);
    }
    box.append(list);
    return box;
  }

  private myWantedsView(): HTMLElement {
    const box = el(this.doc, "section", { "data-testid": "my-wanteds" });
    box.append(el(this.doc, "h2", {}, "My Wanteds"));
    for (const w of this.store.state.myWanteds) {
      box.append(this.quoteBoard(w));
    }
    return box;
  }

  private quoteBoard(w: WantedView): HTMLElement {
    const board = el(this.doc, "div", {
      "data-testid": "quote-board",
      "data-wanted-id": w.wanted_id,
      "data-status": w.status,
    });
    board.append(
      el(this.doc, "h3", {}, `${w.category}: ${w.description} [${w.status}]`),
    );
    const list = el(this.doc, "ol", { "data-testid": "quote-list" });
    const quotes = this.store.state.quoteBoards.get(w.wanted_id) ?? [];
    for (const q of quotes) {
      list.append(this.quoteRow(w, q));
    }
    board.append(list);
    return board;
  }

  private quoteRow(w: WantedView, q: QuoteView): HTMLElement {
    const row = el(this.doc, "li", {
      "data-testid": "quote-row",
      "data-quote-id": q.quote_id,
      "data-provider": q.provider,
    });
    row.append(
      el(this.doc, "span", {},
        `${q.provider} asks ${money(q.price_cents, q.currency)} ` +
        `(rating ${q.provider_rating}) ${q.note}`),
    );
    const accept = el(this.doc, "button", {
      "data-testid": `accept-${q.quote_id}`,
    }, "Accept");
    if (w.status !== "OPEN") accept.setAttribute("disabled", "");
    accept.addEventListener("click", () => {
      void this.store.acceptQuote(q.quote_id).catch(() => {});
    });
    row.append(accept);
    return row;
  }

  private chatsView(): HTMLElement {
    const box = el(this.doc, "section", { "data-testid": "chats" });
    box.append(el(this.doc, "h2", {}, "Chats"));
    for (const [peer, msgs] of this.store.state.activeChats) {
      const pane = el(this.doc, "div", {
        "data-testid": "chat-pane",
        "data-peer": peer,
      });
      pane.append(el(this.doc, "h3", {}, `Chat with ${peer}`));
      const log = el(this.doc, "ul", { "data-testid": "chat-log" });
      for (const m of msgs) {
        log.append(el(this.doc, "li", { "data-msg-id": m.msg_id },
          `${m.author}: ${m.body}`));
      }
      pane.append(log);
      const input = el(this.doc, "input", { "data-testid": `chat-input-${peer}` });
      const send = el(this.doc, "button", { "data-testid": `chat-send-${peer}` }, "Send");
      send.addEventListener("click", () => {
        void this.store.sendChat(peer, input.value).catch(() => {});
      });
      pane.append(input, send);
      pane.append(this.ratingDialog(peer));
      box.append(pane);
    }
    return box;
  }

  private ratingDialog(peer: string): HTMLElement {
    const box = el(this.doc, "div", { "data-testid": `rating-${peer}` });
    const score = el(this.doc, "select", { "data-testid": `rating-score-${peer}` });
    for (const n of [1, 2, 3, 4, 5]) {
      score.append(el(this.doc, "option", { value: String(n) }, String(n)));
    }
    const comment = el(this.doc, "input", { "data-testid": `rating-comment-${peer}`, placeholder: "comment" });
    const submit = el(this.doc, "button", { "data-testid": `rating-submit-${peer}` }, "Rate");
    submit.addEventListener("click", () => {
      void this.store
        .ratePeer(peer, Number(score.value), comment.value)
        .catch(() => {});
    });
    box.append(score, comment, submit);
    return box;
  }
}
