export interface ViewTransform {
  scale: number;
  x: number;
  y: number;
}

export interface Point {
  x: number;
  y: number;
}

export interface ViewerOptions {
  minScale?: number;
  maxScale?: number;
}

type Listener = (transform: ViewTransform) => void;

/**
 * One shared zoom/pan transform for all five panes (the LR anchor and the
 * four candidates), so inspecting a region in any pane inspects the same
 * region in every pane. View position = model position * scale + offset.
 */
export class SyncedViewer {
  private transform: ViewTransform = { scale: 1, x: 0, y: 0 };
  private readonly listeners: Listener[] = [];
  private readonly minScale: number;
  private readonly maxScale: number;

  constructor(options: ViewerOptions = {}) {
    this.minScale = options.minScale ?? 1;
    this.maxScale = options.maxScale ?? 8;
  }

  get current(): ViewTransform {
    return { ...this.transform };
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    listener(this.current);
    return () => {
      const index = this.listeners.indexOf(listener);
      if (index >= 0) this.listeners.splice(index, 1);
    };
  }

  /**
   * Scale by `factor` keeping the pane point `anchor` over the same model
   * position: offset' = anchor - (s'/s) * (anchor - offset).
   */
  zoomAt(anchor: Point, factor: number): void {
    const oldScale = this.transform.scale;
    const newScale = Math.min(this.maxScale, Math.max(this.minScale, oldScale * factor));
    if (newScale === oldScale) return;
    const ratio = newScale / oldScale;
    this.transform = {
      scale: newScale,
      x: anchor.x - ratio * (anchor.x - this.transform.x),
      y: anchor.y - ratio * (anchor.y - this.transform.y),
    };
    this.emit();
  }

  panBy(dx: number, dy: number): void {
    if (dx === 0 && dy === 0) return;
    this.transform = {
      scale: this.transform.scale,
      x: this.transform.x + dx,
      y: this.transform.y + dy,
    };
    this.emit();
  }

  reset(): void {
    this.transform = { scale: 1, x: 0, y: 0 };
    this.emit();
  }

  /** Model position currently shown at a pane point. */
  modelPosition(view: Point): Point {
    return {
      x: (view.x - this.transform.x) / this.transform.scale,
      y: (view.y - this.transform.y) / this.transform.scale,
    };
  }

  cssTransform(): string {
    const { scale, x, y } = this.transform;
    return `translate(${x}px, ${y}px) scale(${scale})`;
  }

  private emit(): void {
    const snapshot = this.current;
    for (const listener of this.listeners) listener(snapshot);
  }
}
