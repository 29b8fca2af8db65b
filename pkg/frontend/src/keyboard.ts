/**
 * Keyboard bindings for the review loop.
 *
 *   j / ArrowLeft    previous pair
 *   k / ArrowRight   next pair
 *   a                accept the text pairing
 *   x                reject the text pairing
 *   1..9             flip the n-th image placement verdict
 *   Enter            submit the judgment
 *
 * Keys are routed to the same action functions the on-screen buttons call,
 * so both input paths produce identical requests.
 */

export interface NavActions {
  prev(): void;
  next(): void;
  markText(ok: boolean): void;
  toggleImage(index: number): void;
  submit(): void;
}

export function bindKeys(target: Window | HTMLElement, actions: NavActions): () => void {
  const onKeyDown = (event: Event) => {
    const e = event as KeyboardEvent;
    const el = e.target as HTMLElement | null;
    // never steal keystrokes from the note field
    if (el && (el.tagName === 'INPUT' || el.tagName === 'TEXTAREA')) return;
    if (e.metaKey || e.ctrlKey || e.altKey) return;

    switch (e.key) {
      case 'j':
      case 'ArrowLeft':
        e.preventDefault();
        actions.prev();
        break;
      case 'k':
      case 'ArrowRight':
        e.preventDefault();
        actions.next();
        break;
      case 'a':
        e.preventDefault();
        actions.markText(true);
        break;
      case 'x':
        e.preventDefault();
        actions.markText(false);
        break;
      case 'Enter':
        e.preventDefault();
        actions.submit();
        break;
      default: {
        if (e.key >= '1' && e.key <= '9') {
          e.preventDefault();
          actions.toggleImage(Number(e.key) - 1);
        }
      }
    }
  };

  target.addEventListener('keydown', onKeyDown);
  return () => target.removeEventListener('keydown', onKeyDown);
}
