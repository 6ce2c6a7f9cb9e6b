import { AnnotationApi } from './api.js';
import { GUIDELINE_SECTIONS } from './guidelines.js';
import { AnnotationSession } from './state.js';
import { SyncedViewer } from './viewer.js';

const BADGES = [1, 2, 3, 4];

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function guidelinesPanel(): HTMLElement {
  const details = el('details', 'guidelines');
  details.appendChild(el('summary', undefined, 'Annotation guidelines'));
  for (const section of GUIDELINE_SECTIONS) {
    details.appendChild(el('h3', undefined, section.heading));
    const list = el('ul');
    for (const point of section.points) {
      list.appendChild(el('li', undefined, point));
    }
    details.appendChild(list);
  }
  return details;
}

/**
 * Image pane with the shared transform applied. A broken URL swaps in a
 * placeholder with a retry button and reports validity to the caller.
 */
function imagePane(
  label: string,
  url: string,
  viewer: SyncedViewer,
  onValidity: (ok: boolean) => void,
): HTMLElement {
  const pane = el('figure', 'pane');
  pane.appendChild(el('figcaption', undefined, label));
  const frame = el('div', 'frame');
  const img = el('img');
  img.draggable = false;
  frame.appendChild(img);
  pane.appendChild(frame);

  const load = () => {
    img.src = '';
    img.src = url;
  };
  img.addEventListener('load', () => {
    frame.querySelector('.broken')?.remove();
    onValidity(true);
  });
  img.addEventListener('error', () => {
    onValidity(false);
    if (frame.querySelector('.broken')) return;
    const placeholder = el('div', 'broken', 'image failed to load');
    const retry = el('button', undefined, 'Retry');
    retry.addEventListener('click', load);
    placeholder.appendChild(retry);
    frame.appendChild(placeholder);
  });

  viewer.subscribe((transform) => {
    img.style.transformOrigin = '0 0';
    img.style.transform = `translate(${transform.x}px, ${transform.y}px) scale(${transform.scale})`;
  });
  frame.addEventListener('wheel', (event) => {
    event.preventDefault();
    const rect = frame.getBoundingClientRect();
    const anchor = { x: event.clientX - rect.left, y: event.clientY - rect.top };
    viewer.zoomAt(anchor, event.deltaY < 0 ? 1.2 : 1 / 1.2);
  });
  let dragging: { x: number; y: number } | null = null;
  frame.addEventListener('mousedown', (event) => {
    dragging = { x: event.clientX, y: event.clientY };
  });
  window.addEventListener('mouseup', () => {
    dragging = null;
  });
  window.addEventListener('mousemove', (event) => {
    if (!dragging) return;
    viewer.panBy(event.clientX - dragging.x, event.clientY - dragging.y);
    dragging = { x: event.clientX, y: event.clientY };
  });

  load();
  return pane;
}

export function mount(root: HTMLElement, api: AnnotationApi, session: AnnotationSession): void {
  const render = () => {
    root.replaceChildren();
    root.appendChild(guidelinesPanel());

    const status = el('p', 'status', session.message ?? '');
    if (session.phase === 'loading') status.textContent = 'loading next task...';
    if (session.phase === 'done' || session.phase === 'failed') {
      root.appendChild(status);
      return;
    }
    const task = session.task;
    if (!task) {
      root.appendChild(status);
      return;
    }

    const viewer = new SyncedViewer();
    const brokenPanes = new Set<string>();
    const submit = el('button', 'submit', 'Submit ranking');

    const refreshSubmit = () => {
      submit.disabled = !session.canSubmit || brokenPanes.size > 0;
      const reason = session.blockedReason;
      submit.title = brokenPanes.size > 0 ? 'some images failed to load' : reason ?? '';
    };

    const board = el('div', 'board');
    board.appendChild(
      imagePane('LR reference', api.imageUrl(task.lr_path), viewer, (ok) => {
        if (ok) brokenPanes.delete('lr');
        else brokenPanes.add('lr');
        refreshSubmit();
      }),
    );

    task.candidates.forEach((candidate, index) => {
      const cell = el('div', 'candidate');
      cell.appendChild(
        imagePane(`Candidate ${index + 1}`, api.imageUrl(candidate.path), viewer, (ok) => {
          if (ok) brokenPanes.delete(candidate.id);
          else brokenPanes.add(candidate.id);
          refreshSubmit();
        }),
      );
      const badgeRow = el('div', 'badges');
      for (const badge of BADGES) {
        const button = el('button', 'badge', String(badge));
        const paint = () => {
          button.classList.toggle('active', session.currentSelections[index] === badge);
        };
        button.addEventListener('click', () => {
          session.select(index, badge);
          badgeRow.querySelectorAll('.badge').forEach((other, i) => {
            other.classList.toggle('active', session.currentSelections[index] === BADGES[i]);
          });
          refreshSubmit();
        });
        paint();
        badgeRow.appendChild(button);
      }
      cell.appendChild(badgeRow);
      board.appendChild(cell);
    });
    root.appendChild(board);

    const controls = el('div', 'controls');
    const resetView = el('button', undefined, 'Reset view');
    resetView.addEventListener('click', () => viewer.reset());
    controls.appendChild(resetView);
    submit.addEventListener('click', async () => {
      submit.disabled = true;
      await session.submit();
      render();
    });
    controls.appendChild(submit);
    controls.appendChild(status);
    root.appendChild(controls);
    refreshSubmit();
  };

  void session.loadNext().then(render);
}

export function start(): void {
  const root = document.getElementById('app');
  if (!root) throw new Error('missing #app element');
  const params = new URLSearchParams(window.location.search);
  const annotatorId = params.get('annotator') ?? 'anonymous';
  const baseUrl = params.get('service') ?? window.location.origin;
  const api = new AnnotationApi({ baseUrl });
  mount(root, api, new AnnotationSession(api, annotatorId));
}

if (typeof document !== 'undefined' && document.getElementById('app')) {
  start();
}
