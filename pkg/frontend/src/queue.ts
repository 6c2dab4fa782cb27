/**
 * Rating queue: one card at a time, keyboard 0-5 to pick a score, Enter (or
 * the button) to submit. Submissions carry a fresh nonce; failed sends stay
 * in a local retry list and are resent with the SAME nonce, so a flaky
 * network cannot double-apply a rating. A 409 means a training round is
 * running: the queue freezes behind a banner until it finishes.
 */
import { ApiError, Client, PendingPair, RatingState, freshNonce } from './api.js';

interface QueuedSubmit {
  i: number;
  j: number;
  rating: number;
  nonce: string;
}

// [x] model inferred and reviewer agreed; {x} (y) model x, reviewer said y
export function ratingBadges(pair: PendingPair): string {
  const m = pair.model_rating;
  const p = pair.prior_sme_rating;
  if (m === null && p === null) return '';
  if (m !== null && p !== null) {
    return m === p ? `[${m}]` : `{${m}} (${p})`;
  }
  if (m !== null) return `{${m}}`;
  return `(${p})`;
}

export type QueueFilter = 'all' | 'disagreements';

export function isDisagreement(pair: PendingPair): boolean {
  return (
    pair.model_rating !== null &&
    pair.prior_sme_rating !== null &&
    pair.model_rating !== pair.prior_sme_rating
  );
}

export class RatingQueue {
  pairs: PendingPair[] = [];
  selected: number | null = null;
  frozen = false;
  retryQueue: QueuedSubmit[] = [];
  lastState: RatingState | null = null;
  private banner = '';

  constructor(
    private root: HTMLElement,
    private client: Client,
    private filter: QueueFilter = 'all',
  ) {
    root.addEventListener('click', (ev) => this.onClick(ev));
  }

  async load(): Promise<void> {
    try {
      const all = await this.client.pending();
      this.pairs = this.filter === 'all' ? all : all.filter(isDisagreement);
      this.frozen = false;
      this.banner = '';
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.freeze('training in progress');
      } else {
        this.banner = `could not load queue: ${(err as Error).message}`;
      }
    }
    this.render();
  }

  freeze(message: string): void {
    this.frozen = true;
    this.banner = message;
    this.render();
  }

  current(): PendingPair | undefined {
    return this.pairs[0];
  }

  select(rating: number): void {
    if (this.frozen || rating < 0 || rating > 5 || !this.current()) return;
    this.selected = rating;
    this.render();
  }

  handleKey(key: string): void {
    if (key >= '0' && key <= '5') this.select(Number(key));
    if (key === 'Enter') void this.submit();
  }

  /** Send the selected rating for the top card, then advance. */
  async submit(): Promise<void> {
    const pair = this.current();
    if (this.frozen || pair === undefined || this.selected === null) return;
    const entry: QueuedSubmit = {
      i: pair.i,
      j: pair.j,
      rating: this.selected,
      nonce: freshNonce(),
    };
    this.pairs.shift();
    this.selected = null;
    await this.send(entry);
    this.render();
  }

  private async send(entry: QueuedSubmit): Promise<void> {
    try {
      const reply = await this.client.submitRating(
        entry.i,
        entry.j,
        entry.rating,
        entry.nonce,
      );
      this.lastState = reply.state;
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        this.freeze('training in progress');
        this.retryQueue.push(entry);
      } else if (err instanceof ApiError) {
        this.banner = `rejected: ${err.message}`;
      } else {
        // network trouble: keep for a later retry under the same nonce
        this.retryQueue.push(entry);
        this.banner = 'offline: rating queued for retry';
      }
    }
  }

  /** Resend everything that failed, oldest first, preserving nonces. */
  async flush(): Promise<void> {
    const waiting = this.retryQueue;
    this.retryQueue = [];
    for (const entry of waiting) {
      await this.send(entry);
    }
    this.render();
  }

  private onClick(ev: Event): void {
    const target = ev.target as HTMLElement;
    const pick = target.getAttribute('data-rating');
    if (pick !== null) this.select(Number(pick));
    if (target.getAttribute('data-submit') !== null) void this.submit();
  }

  render(): void {
    const pair = this.current();
    const bannerHtml = this.banner
      ? `<div class="banner">${this.banner}</div>`
      : '';
    if (!pair) {
      this.root.innerHTML = `${bannerHtml}<p class="empty">No pairs waiting for a rating.</p>`;
      return;
    }
    const badges = ratingBadges(pair);
    const buttons = [0, 1, 2, 3, 4, 5]
      .map(
        (r) =>
          `<button data-rating="${r}" class="${this.selected === r ? 'picked' : ''}" ${
            this.frozen ? 'disabled' : ''
          }>${r}</button>`,
      )
      .join('');
    this.root.innerHTML = `
      ${bannerHtml}
      <div class="pair-card" data-pair="${pair.i}-${pair.j}">
        <div class="pair-head">
          <span class="pair-names">${pair.name_i} &times; ${pair.name_j}</span>
          <span class="pair-badges">${badges}</span>
          <span class="pair-left">${this.pairs.length - 1} more after this</span>
        </div>
        <div class="itds">
          <div class="itd"><h4>${pair.name_i}</h4><p>${pair.itd_i}</p></div>
          <div class="itd"><h4>${pair.name_j}</h4><p>${pair.itd_j}</p></div>
        </div>
        <div class="rate-row">
          ${buttons}
          <button data-submit class="submit" ${
            this.selected === null || this.frozen ? 'disabled' : ''
          }>Submit</button>
        </div>
      </div>`;
  }
}
