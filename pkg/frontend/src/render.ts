import type { AppState, Draft } from './state.js';
import { currentDraft, progress } from './state.js';
import type { NavActions } from './keyboard.js';
import type { PairDetail, Report, Segment } from './types.js';

export interface UiActions extends NavActions {
  select(index: number): void;
  setNote(text: string): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function fmt(value: number | null): string {
  return value === null ? 'n/a' : value.toFixed(4);
}

function reportStrip(doc: Document, report: Report | null): HTMLElement {
  const strip = el(doc, 'div', 'report-strip');
  if (!report) {
    strip.append(el(doc, 'span', 'muted', 'no judgments yet'));
    return strip;
  }
  for (const side of ['text', 'vision'] as const) {
    const r = report[side];
    const cell = el(doc, 'span', `metric metric-${side}`);
    cell.textContent =
      `${side} P ${fmt(r.precision)} R ${fmt(r.recall)} F1 ${fmt(r.f1)} (${r.judged}/${r.total})`;
    strip.append(cell);
  }
  return strip;
}

function pairList(doc: Document, state: AppState, actions: UiActions): HTMLElement {
  const nav = el(doc, 'nav', 'pair-list');
  state.summaries.forEach((s, i) => {
    const row = el(doc, 'button', 'pair-row');
    row.type = 'button';
    row.dataset.key = s.key;
    if (i === state.cursor) row.classList.add('current');
    if (s.judged) row.classList.add('judged');
    row.append(el(doc, 'span', 'pair-label', `${s.chapter} — ${s.label}`));
    const badges = el(doc, 'span', 'badges');
    badges.append(el(doc, 'span', 'badge', s.doc));
    if (s.modality === 'text_image') badges.append(el(doc, 'span', 'badge image', `${s.n_images} img`));
    if (s.partial) badges.append(el(doc, 'span', 'badge partial', 'partial'));
    if (s.judged) badges.append(el(doc, 'span', 'badge done', 'judged'));
    row.append(badges);
    row.addEventListener('click', () => actions.select(i));
    nav.append(row);
  });
  return nav;
}

function segmentBlock(doc: Document, title: string, segments: Segment[]): HTMLElement {
  const section = el(doc, 'section', 'segments');
  section.append(el(doc, 'h3', undefined, title));
  if (!segments.length) {
    section.append(el(doc, 'p', 'muted', 'not found'));
    return section;
  }
  for (const seg of segments) {
    if (seg.type === 'image') {
      section.append(el(doc, 'p', 'image-ref muted', `[image ${seg.value}]`));
    } else {
      section.append(el(doc, 'p', undefined, seg.value));
    }
  }
  return section;
}

function verdictButton(
  doc: Document,
  label: string,
  active: boolean,
  onClick: () => void,
  extraClass: string,
): HTMLButtonElement {
  const btn = el(doc, 'button', `verdict ${extraClass}`);
  btn.type = 'button';
  btn.textContent = label;
  if (active) btn.classList.add('active');
  btn.addEventListener('click', onClick);
  return btn;
}

function imagePanel(doc: Document, detail: PairDetail, draft: Draft, actions: UiActions): HTMLElement {
  const panel = el(doc, 'section', 'images');
  panel.append(el(doc, 'h3', undefined, 'image placements'));
  detail.images.forEach((img, i) => {
    const card = el(doc, 'figure', 'image-card');
    const picture = doc.createElement('img');
    picture.src = img.url;
    picture.alt = img.ref;
    card.append(picture);
    const caption = el(doc, 'figcaption');
    caption.append(el(doc, 'span', 'muted', `${i + 1}. in ${img.slot}: `));
    const ok = draft.visionOk[img.id];
    caption.append(
      verdictButton(doc, ok ? 'placed right' : 'placed wrong', true,
        () => actions.toggleImage(i), ok ? 'accept image-toggle' : 'reject image-toggle'),
    );
    card.append(caption);
    panel.append(card);
  });
  return panel;
}

function judgmentPanel(doc: Document, state: AppState, actions: UiActions): HTMLElement {
  const detail = state.detail as PairDetail;
  const draft = currentDraft(state) as Draft;
  const panel = el(doc, 'section', 'judgment');

  const textRow = el(doc, 'div', 'verdict-row');
  textRow.append(el(doc, 'span', undefined, 'text pairing:'));
  textRow.append(verdictButton(doc, 'accept (a)', draft.textOk === true,
    () => actions.markText(true), 'accept text-accept'));
  textRow.append(verdictButton(doc, 'reject (x)', draft.textOk === false,
    () => actions.markText(false), 'reject text-reject'));
  panel.append(textRow);

  if (detail.images.length) panel.append(imagePanel(doc, detail, draft, actions));

  const note = doc.createElement('input');
  note.type = 'text';
  note.placeholder = 'note (optional)';
  note.className = 'note';
  note.value = draft.note;
  note.addEventListener('input', () => actions.setNote(note.value));
  panel.append(note);

  const submit = el(doc, 'button', 'submit');
  submit.type = 'button';
  submit.textContent = detail.judgment ? `resubmit (v${detail.judgment.version})` : 'submit (Enter)';
  submit.addEventListener('click', () => actions.submit());
  panel.append(submit);

  return panel;
}

function pairView(doc: Document, state: AppState, actions: UiActions): HTMLElement {
  const main = el(doc, 'main', 'pair-view');
  const detail = state.detail;
  if (!detail) {
    main.append(el(doc, 'p', 'muted', 'no pair selected'));
    return main;
  }
  const head = el(doc, 'header');
  head.append(el(doc, 'h2', undefined, `${detail.chapter} — ${detail.label}`));
  const meta = el(doc, 'p', 'muted');
  meta.textContent = `${detail.doc} · ${detail.modality}${detail.partial ? ' · partial' : ''}`;
  head.append(meta);
  main.append(head);

  main.append(segmentBlock(doc, 'question', detail.question));
  if (detail.answer) {
    const answer = el(doc, 'section', 'segments');
    answer.append(el(doc, 'h3', undefined, 'answer'));
    answer.append(el(doc, 'p', undefined, detail.answer));
    main.append(answer);
  }
  main.append(segmentBlock(doc, 'solution', detail.solution));
  main.append(judgmentPanel(doc, state, actions));
  return main;
}

export function render(root: HTMLElement, state: AppState, actions: UiActions): void {
  const doc = root.ownerDocument;
  root.textContent = '';

  const header = el(doc, 'header', 'topbar');
  const done = progress(state);
  header.append(el(doc, 'h1', undefined, 'review'));
  header.append(el(doc, 'span', 'progress', `${done.judged}/${done.total} judged`));
  header.append(reportStrip(doc, state.report));
  root.append(header);

  const layout = el(doc, 'div', 'layout');
  layout.append(pairList(doc, state, actions));
  layout.append(pairView(doc, state, actions));
  root.append(layout);

  const status = el(doc, 'p', 'status');
  status.textContent = state.status;
  root.append(status);
}
