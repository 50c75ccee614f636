# LangGraph nodes for sampling, accumulation, update and checkpointing
