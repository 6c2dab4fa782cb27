/** Tab shell: Rate / Review Disagreements / Dashboard. */
import { Client } from './api.js';
import { Dashboard } from './dashboard.js';
import { RatingQueue } from './queue.js';

const client = new Client();

const rateRoot = document.getElementById('tab-rate') as HTMLElement;
const reviewRoot = document.getElementById('tab-review') as HTMLElement;
const dashRoot = document.getElementById('tab-dashboard') as HTMLElement;

const rateQueue = new RatingQueue(rateRoot, client, 'all');
const reviewQueue = new RatingQueue(reviewRoot, client, 'disagreements');
const dashboard = new Dashboard(dashRoot, client, () => {
  // after a round completes, both queues show the new review pairs
  void rateQueue.load();
  void reviewQueue.load();
});

const tabs: Record<string, HTMLElement> = {
  rate: rateRoot,
  review: reviewRoot,
  dashboard: dashRoot,
};

let active = 'rate';

function showTab(name: string): void {
  active = name;
  for (const [key, el] of Object.entries(tabs)) {
    el.style.display = key === name ? 'block' : 'none';
  }
  document.querySelectorAll('nav button').forEach((b) => {
    b.classList.toggle('active', b.getAttribute('data-tab') === name);
  });
}

document.querySelectorAll('nav button').forEach((b) => {
  b.addEventListener('click', () => showTab(b.getAttribute('data-tab') ?? 'rate'));
});

// keyboard rating lands on whichever queue tab is visible
document.addEventListener('keydown', (ev) => {
  if (ev.target instanceof HTMLInputElement) return;
  if (active === 'rate') rateQueue.handleKey(ev.key);
  if (active === 'review') reviewQueue.handleKey(ev.key);
});

// resend queued ratings (same nonces) when connectivity returns
window.addEventListener('online', () => {
  void rateQueue.flush();
  void reviewQueue.flush();
});

showTab('rate');
void rateQueue.load();
void reviewQueue.load();
void dashboard.load();
