// Shapes of the review server's JSON API. This app talks to nothing else.

export interface PairSummary {
  key: string;
  chapter: string;
  label: string;
  doc: string;
  modality: 'text_only' | 'text_image';
  partial: boolean;
  n_images: number;
  judged: boolean;
}

export interface Segment {
  type: 'text' | 'image';
  value: string;
}

export interface PairImage {
  id: string; // "<slot>:<ref>", the judgment key for this occurrence
  slot: 'question' | 'solution';
  ref: string;
  url: string;
}

export interface Judgment {
  text_ok: boolean;
  vision_ok: Record<string, boolean>;
  note: string;
  version: number;
}

export interface PairDetail {
  key: string;
  doc: string;
  chapter: string;
  label: string;
  question: Segment[];
  answer: string;
  solution: Segment[];
  modality: string;
  partial: boolean;
  images: PairImage[];
  judgment: Judgment | null;
}

export interface SideReport {
  tp: number;
  fp: number;
  fn: number;
  precision: number | null;
  recall: number | null;
  f1: number;
  judged: number;
  total: number;
}

export interface Report {
  text: SideReport;
  vision: SideReport;
}

export interface PairListing {
  total: number;
  offset: number;
  limit: number;
  pairs: PairSummary[];
}
