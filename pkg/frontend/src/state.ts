import type { ApiClient } from "./api";
import type { AnnotationAction, InstanceCard, MetricsReport, TaskSummary } from "./types";

/**
 * Review-session state machine.
 *
 * The server is the only authority: cards come from the queue endpoint and
 * every action is POSTed and acknowledged before the cursor advances, so a
 * reload reproduces the same view from the API. A failed POST rolls the
 * card back and surfaces the error instead of dropping the action.
 */
export class Session {
  task: TaskSummary | null = null;
  queue: InstanceCard[] = [];
  cursor = 0;
  pendingActions = 0;
  acknowledgedActions = 0;
  lastMetrics: MetricsReport | null = null;
  lastError: string | null = null;

  constructor(
    private api: ApiClient,
    private annotator: string = "console",
    private batchSize: number = 30,
  ) {}

  get currentCard(): InstanceCard | null {
    return this.cursor < this.queue.length ? this.queue[this.cursor] : null;
  }

  get remaining(): number {
    return Math.max(0, this.queue.length - this.cursor);
  }

  async selectTask(task: TaskSummary): Promise<void> {
    this.task = task;
    this.queue = [];
    this.cursor = 0;
    await this.refillQueue();
  }

  async refillQueue(): Promise<void> {
    if (!this.task) return;
    this.queue = await this.api.fetchQueue(this.task.task, this.batchSize);
    this.cursor = 0;
  }

  /**
   * Apply one action to the current card: optimistic local update, POST,
   * advance on acknowledgment, roll back on failure.
   */
  async act(action: AnnotationAction): Promise<boolean> {
    const card = this.currentCard;
    if (!card || !this.task) return false;
    const before: InstanceCard = { ...card };
    applyLocally(card, action);
    this.pendingActions += 1;
    try {
      await this.api.postAnnotation(this.task.task, card.id, action, this.annotator);
      this.acknowledgedActions += 1;
      this.lastError = null;
      this.cursor += 1;
      if (this.cursor >= this.queue.length) await this.refillQueue();
      return true;
    } catch (error) {
      Object.assign(card, before); // roll the optimistic update back
      this.lastError = error instanceof Error ? error.message : String(error);
      return false;
    } finally {
      this.pendingActions -= 1;
    }
  }

  async refreshMetrics(): Promise<MetricsReport | null> {
    if (!this.task) return null;
    this.lastMetrics = await this.api.metrics(this.task.task);
    return this.lastMetrics;
  }
}

export function applyLocally(card: InstanceCard, action: AnnotationAction): void {
  if (action.action === "relabel") {
    card.current_label = action.label;
  } else if (action.action === "mark_oos") {
    card.oos_state = (action.flag ?? true) ? "out_of_scope" : "in_scope";
  }
  card.label_provenance = "human";
}
