/**
 * Client for the peer core's `/app` WebSocket control API.
 *
 * Commands are `{cmd, ..., seq}` frames answered by `{type: "RESULT",
 * seq, ok, ...}`; server-pushed events arrive as `{type: "EVENT",
 * event: "<name>", ...}`. The client correlates replies by seq and
 * reconnects with exponential backoff when the socket drops. All
 * business logic lives in the peer core; this class only moves frames.
 */

export interface ResultFrame {
  type: "RESULT";
  seq: number | null;
  ok: boolean;
  data?: Record<string, unknown>;
  code?: string;
  detail?: string;
}

export interface EventFrame {
  type: "EVENT";
  event: string;
  [key: string]: unknown;
}

export class ControlError extends Error {
  constructor(public code: string, public detail: string) {
    super(`${code}: ${detail}`);
    this.name = "ControlError";
  }
}

/** Minimal WebSocket surface so tests can inject the `ws` package. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export type ConnectionState = "connecting" | "connected" | "offline";

interface Pending {
  resolve: (data: Record<string, unknown>) => void;
  reject: (err: Error) => void;
}

export class ControlClient {
  private socket: SocketLike | null = null;
  private seq = 0;
  private pending = new Map<number, Pending>();
  private eventListeners = new Set<(ev: EventFrame) => void>();
  private stateListeners = new Set<(s: ConnectionState) => void>();
  private retryMs = 250;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;
  private closed = false;
  state: ConnectionState = "offline";

  constructor(
    private url: string,
    private makeSocket: SocketFactory = (u) =>
      new WebSocket(u) as unknown as SocketLike,
  ) {}

  connect(): void {
    this.closed = false;
    this.setState("connecting");
    const sock = this.makeSocket(this.url);
    this.socket = sock;
    sock.onopen = () => {
      this.retryMs = 250;
      this.setState("connected");
    };
    sock.onmessage = (ev) => this.dispatch(String(ev.data));
    sock.onerror = () => {};
    sock.onclose = () => {
      if (this.socket !== sock) return;
      this.socket = null;
      this.failPending(new ControlError("ERR_OFFLINE", "control socket closed"));
      this.setState("offline");
      if (!this.closed) this.scheduleReconnect();
    };
  }

  close(): void {
    this.closed = true;
    if (this.retryTimer) clearTimeout(this.retryTimer);
    this.retryTimer = null;
    const sock = this.socket;
    this.socket = null;
    if (sock) sock.close();
    this.failPending(new ControlError("ERR_OFFLINE", "client closed"));
    this.setState("offline");
  }

  onEvent(fn: (ev: EventFrame) => void): () => void {
    this.eventListeners.add(fn);
    return () => this.eventListeners.delete(fn);
  }

  onStateChange(fn: (s: ConnectionState) => void): () => void {
    this.stateListeners.add(fn);
    return () => this.stateListeners.delete(fn);
  }

  /** Send a command and resolve with the RESULT data, or reject with ControlError. */
  request(
    cmd: string,
    params: Record<string, unknown> = {},
  ): Promise<Record<string, unknown>> {
    if (this.state !== "connected" || !this.socket) {
      return Promise.reject(
        new ControlError("ERR_OFFLINE", "peer core unreachable"),
      );
    }
    const seq = ++this.seq;
    const frame = JSON.stringify({ cmd, ...params, seq });
    return new Promise((resolve, reject) => {
      this.pending.set(seq, { resolve, reject });
      try {
        this.socket!.send(frame);
      } catch (err) {
        this.pending.delete(seq);
        reject(new ControlError("ERR_OFFLINE", String(err)));
      }
    });
  }

  private dispatch(raw: string): void {
    let frame: ResultFrame | EventFrame;
    try {
      frame = JSON.parse(raw);
    } catch {
      return;
    }
    if (frame.type === "EVENT") {
      for (const fn of this.eventListeners) fn(frame);
      return;
    }
    if (frame.type === "RESULT" && typeof frame.seq === "number") {
      const entry = this.pending.get(frame.seq);
      if (!entry) return;
      this.pending.delete(frame.seq);
      if (frame.ok) {
        entry.resolve(frame.data ?? {});
      } else {
        entry.reject(
          new ControlError(frame.code ?? "ERR_INTERNAL", frame.detail ?? ""),
        );
      }
    }
  }

  private failPending(err: Error): void {
    const entries = [...this.pending.values()];
    this.pending.clear();
    for (const e of entries) e.reject(err);
  }

  private scheduleReconnect(): void {
    if (this.retryTimer) return;
    this.retryTimer = setTimeout(() => {
      this.retryTimer = null;
      if (!this.closed) this.connect();
    }, this.retryMs);
    this.retryMs = Math.min(this.retryMs * 2, 5000);
  }

  private setState(s: ConnectionState): void {
    if (s === this.state) return;
    this.state = s;
    for (const fn of this.stateListeners) fn(s);
  }
}
